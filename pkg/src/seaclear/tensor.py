"""Minimal reverse-mode differentiable tensor core on numpy arrays.

Everything downstream (physics, capsules, the full model, losses) is composed
from the primitives here.  Tensors are float32 by default; gradient checks run
the same graph in float64.  All operations are pure and deterministic.
"""
from __future__ import annotations

import contextlib
import math

import numpy as np

__all__ = [
    "Tensor", "Rng", "ShapeError", "DomainError", "no_grad",
    "add", "sub", "mul", "div", "pointwise_binary",
    "neg", "exp", "sqrt", "sigmoid", "silu", "abs_", "clamp_min",
    "pointwise_unary",
    "reduce_sum", "reduce_mean", "l2norm", "reduce",
    "softmax", "matmul", "reshape", "transpose", "concat", "narrow",
    "conv2d", "conv_transpose2d", "avg_pool2", "upsample_nearest2",
    "group_norm", "self_attention",
    "grad_check", "kaiming_uniform",
]


class ShapeError(ValueError):
    """Operand shapes are inconsistent with the operation's contract."""


class DomainError(ValueError):
    """Input values lie outside the operation's numeric domain."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Dense n-d array of float32/float64 values with optional grad tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def detach(self):
        """A view of the same values with no tape participation."""
        return Tensor(self.data)

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_err(self)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Reverse pass seeding d(self)/d(self) = 1; self must be scalar."""
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {self.shape}")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _scalar_err(t):
    raise ShapeError(f"expected a scalar tensor, got shape {t.shape}")


def _wrap(x, dtype=np.float32):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward_fn):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"shapes {a.shape} and {b.shape} are not broadcastable") from None


# ---------------------------------------------------------------------------
# pointwise binary
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = _wrap(a), _wrap(b, getattr(a, "dtype", np.float32))
    _check_broadcast(a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = _wrap(a), _wrap(b, getattr(a, "dtype", np.float32))
    _check_broadcast(a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = _wrap(a), _wrap(b, getattr(a, "dtype", np.float32))
    _check_broadcast(a, b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)))


def div(a, b):
    a, b = _wrap(a), _wrap(b, getattr(a, "dtype", np.float32))
    _check_broadcast(a, b)
    small = np.abs(b.data) < 1e-12
    if small.any():
        idx = np.unravel_index(int(np.argmax(small)), b.shape)
        raise DomainError(f"division by near-zero denominator at index {idx}")
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / bd, a.shape),
                            _unbroadcast(-g * out / bd, b.shape)))


_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def pointwise_binary(kind, a, b):
    if kind not in _BINARY:
        raise ValueError(f"unknown binary op {kind!r}")
    return _BINARY[kind](a, b)


# ---------------------------------------------------------------------------
# pointwise unary
# ---------------------------------------------------------------------------

def neg(x):
    x = _wrap(x)
    return _make(-x.data, (x,), lambda g: (-g,))


def exp(x):
    x = _wrap(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def sqrt(x):
    x = _wrap(x)
    bad = x.data < 0
    if bad.any():
        idx = np.unravel_index(int(np.argmax(bad)), x.shape)
        raise DomainError(f"sqrt of negative value at index {idx}")
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g * 0.5 / np.maximum(out, 1e-30),))


def sigmoid(x):
    x = _wrap(x)
    s = 1.0 / (1.0 + np.exp(-x.data))
    return _make(s, (x,), lambda g: (g * s * (1.0 - s),))


def silu(x):
    x = _wrap(x)
    s = 1.0 / (1.0 + np.exp(-x.data))
    return _make(x.data * s, (x,), lambda g: (g * (s + x.data * s * (1.0 - s)),))


def abs_(x):
    x = _wrap(x)
    return _make(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def clamp_min(x, floor):
    """max(x, floor) elementwise; gradient passes only where x > floor."""
    x = _wrap(x)
    mask = x.data > floor
    return _make(np.maximum(x.data, np.asarray(floor, dtype=x.dtype)), (x,),
                 lambda g: (g * mask,))


_UNARY = {"silu": silu, "sigmoid": sigmoid, "exp": exp, "neg": neg, "sqrt": sqrt}


def pointwise_unary(kind, x):
    if kind not in _UNARY:
        raise ValueError(f"unknown unary op {kind!r}")
    return _UNARY[kind](x)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _norm_axes(axes, ndim):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    axes = tuple(a % ndim if -ndim <= a < ndim else _axis_err(a, ndim) for a in axes)
    return axes


def _axis_err(a, ndim):
    raise ShapeError(f"axis {a} out of range for {ndim}-d tensor")


def _expand_like(g, shape, axes, keepdims):
    if not keepdims:
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def reduce_sum(x, axes=None, keepdims=False):
    x = _wrap(x)
    ax = _norm_axes(axes, x.ndim)
    return _make(x.data.sum(axis=ax, keepdims=keepdims), (x,),
                 lambda g: (_expand_like(g, x.shape, ax, keepdims).copy(),))


def reduce_mean(x, axes=None, keepdims=False):
    x = _wrap(x)
    ax = _norm_axes(axes, x.ndim)
    count = 1
    for a in ax:
        count *= x.shape[a]
    return _make(x.data.mean(axis=ax, keepdims=keepdims), (x,),
                 lambda g: (_expand_like(g, x.shape, ax, keepdims) / count,))


def l2norm(x, axes, keepdims=False, eps=0.0):
    """sqrt of the sum of squares along `axes`; eps guards the zero-vector kink."""
    ss = reduce_sum(mul(x, x), axes=axes, keepdims=keepdims)
    if eps:
        ss = add(ss, eps)
    return sqrt(ss)


def reduce(kind, x, axes=None, keepdims=False):
    if kind == "sum":
        return reduce_sum(x, axes, keepdims)
    if kind == "mean":
        return reduce_mean(x, axes, keepdims)
    if kind == "l2norm":
        return l2norm(x, axes, keepdims)
    raise ValueError(f"unknown reduction {kind!r}")


def softmax(x, axis):
    x = _wrap(x)
    shift = Tensor(x.data.max(axis=axis, keepdims=True))  # detached, shift-invariant
    e = exp(sub(x, shift))
    return div(e, reduce_sum(e, axes=(axis,), keepdims=True))


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(x, shape):
    x = _wrap(x)
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x, axes):
    x = _wrap(x)
    inv = np.argsort(axes)
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def concat(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.array_split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, back)


def narrow(x, axis, start, length):
    """Contiguous slice [start, start+length) along one axis."""
    x = _wrap(x)
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)

    def back(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[sl] = g
        return (full,)

    return _make(x.data[sl].copy(), (x,), back)


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        da = _unbroadcast(g @ bd.swapaxes(-1, -2), a.shape)
        db = _unbroadcast(ad.swapaxes(-1, -2) @ g, b.shape)
        return (da, db)

    return _make(ad @ bd, (a, b), back)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _im2col(xd, k, stride, padding):
    """(N,C,H,W) -> (N, C*k*k, Ho*Wo) patch matrix."""
    if padding:
        xd = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    n, c, h, w = xd.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    v = np.lib.stride_tricks.sliding_window_view(xd, (k, k), axis=(2, 3))
    v = v[:, :, ::stride, ::stride]                    # (N,C,Ho,Wo,k,k)
    cols = v.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * k * k, ho * wo)
    return np.ascontiguousarray(cols), ho, wo


def _col2im(cols, xshape, k, stride, padding, ho, wo):
    """Adjoint of _im2col: scatter-add patches back into (N,C,H,W)."""
    n, c, h, w = xshape
    hp, wp = h + 2 * padding, w + 2 * padding
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    cols = cols.reshape(n, c, k, k, ho, wo)
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + ho * stride:stride, j:j + wo * stride:stride] += cols[:, :, i, j]
    if padding:
        out = out[:, :, padding:hp - padding, padding:wp - padding]
    return out


def _as_batched(x):
    if x.ndim == 3:
        return x.data[None], True
    if x.ndim == 4:
        return x.data, False
    raise ShapeError(f"expected 3-d or 4-d input, got shape {x.shape}")


def conv2d(x, w, b=None, stride=1, padding=0):
    """Cross-correlation with weight (C_out, C_in, k, k) and optional bias (C_out,)."""
    x, w = _wrap(x), _wrap(w)
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d weight must be (C_out, C_in, k, k), got {w.shape}")
    xd, squeezed = _as_batched(x)
    co, ci, k, _ = w.shape
    if xd.shape[1] != ci:
        raise ShapeError(f"conv2d input has {xd.shape[1]} channels, weight expects {ci}")
    if xd.shape[2] + 2 * padding < k or xd.shape[3] + 2 * padding < k:
        raise ShapeError(f"padded spatial extent smaller than kernel {k}")
    n = xd.shape[0]
    cols, ho, wo = _im2col(xd, k, stride, padding)
    w2 = w.data.reshape(co, ci * k * k)
    out = np.matmul(w2, cols).reshape(n, co, ho, wo)
    parents = [x, w]
    if b is not None:
        b = _wrap(b)
        if b.shape != (co,):
            raise ShapeError(f"conv2d bias must be ({co},), got {b.shape}")
        out = out + b.data.reshape(1, co, 1, 1)
        parents.append(b)
    if squeezed:
        out = out[0]
    xshape = xd.shape

    def back(g):
        gd = g[None] if squeezed else g
        g2 = gd.reshape(n, co, ho * wo)
        cols_b, _, _ = _im2col(xd.astype(g.dtype, copy=False), k, stride, padding)
        dw = np.matmul(g2, cols_b.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        dcols = np.matmul(w2.T.astype(g.dtype, copy=False), g2)
        dx = _col2im(dcols, xshape, k, stride, padding, ho, wo)
        if squeezed:
            dx = dx[0]
        grads = [dx, dw]
        if b is not None:
            grads.append(gd.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _make(out, parents, back)


def conv_transpose2d(x, w, b=None, stride=1, padding=0):
    """Adjoint of conv2d; weight (C_in, C_out, k, k), optional bias (C_out,)."""
    x, w = _wrap(x), _wrap(w)
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv_transpose2d weight must be (C_in, C_out, k, k), got {w.shape}")
    xd, squeezed = _as_batched(x)
    ci, co, k, _ = w.shape
    if xd.shape[1] != ci:
        raise ShapeError(f"conv_transpose2d input has {xd.shape[1]} channels, weight expects {ci}")
    n, _, h, wi = xd.shape
    ho = (h - 1) * stride - 2 * padding + k
    wo = (wi - 1) * stride - 2 * padding + k
    if ho < 1 or wo < 1:
        raise ShapeError("conv_transpose2d output extent would be non-positive")
    w2 = w.data.reshape(ci, co * k * k)
    cols = np.matmul(w2.T, xd.reshape(n, ci, h * wi))
    out = _col2im(cols, (n, co, ho, wo), k, stride, padding, h, wi)
    parents = [x, w]
    if b is not None:
        b = _wrap(b)
        if b.shape != (co,):
            raise ShapeError(f"conv_transpose2d bias must be ({co},), got {b.shape}")
        out = out + b.data.reshape(1, co, 1, 1)
        parents.append(b)
    if squeezed:
        out = out[0]

    def back(g):
        gd = g[None] if squeezed else g
        gcols, _, _ = _im2col(gd, k, stride, padding)
        dx = np.matmul(w2.astype(g.dtype, copy=False), gcols).reshape(n, ci, h, wi)
        dw = np.matmul(xd.reshape(n, ci, h * wi).astype(g.dtype, copy=False),
                       gcols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        if squeezed:
            dx = dx[0]
        grads = [dx, dw]
        if b is not None:
            grads.append(gd.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _make(out, parents, back)


# ---------------------------------------------------------------------------
# pooling / upsampling
# ---------------------------------------------------------------------------

def _replicate_pad_to_even(x):
    xd = x.data
    ph, pw = xd.shape[-2] % 2, xd.shape[-1] % 2
    pads = [(0, 0)] * (xd.ndim - 2) + [(0, ph), (0, pw)]
    h, w = xd.shape[-2], xd.shape[-1]

    def back(g):
        g = g.copy()
        if ph:
            g[..., h - 1, :] += g[..., h, :]
            g = g[..., :h, :]
        if pw:
            g[..., :, w - 1] += g[..., :, w]
            g = g[..., :, :w]
        return (g,)

    return _make(np.pad(xd, pads, mode="edge"), (x,), back)


def avg_pool2(x):
    """2x2 average pooling; odd extents are replicate-padded first."""
    x = _wrap(x)
    if x.ndim < 2:
        raise ShapeError(f"avg_pool2 needs at least 2-d input, got shape {x.shape}")
    if x.shape[-1] % 2 or x.shape[-2] % 2:
        x = _replicate_pad_to_even(x)
    h, w = x.shape[-2], x.shape[-1]
    lead = x.shape[:-2]
    xd = x.data.reshape(lead + (h // 2, 2, w // 2, 2))
    out = xd.mean(axis=(-3, -1))

    def back(g):
        g4 = np.repeat(np.repeat(g, 2, axis=-1), 2, axis=-2)
        return (g4.reshape(x.shape) * 0.25,)

    return _make(out, (x,), back)


def upsample_nearest2(x):
    """Replicate each pixel into a 2x2 block."""
    x = _wrap(x)
    if x.ndim < 2:
        raise ShapeError(f"upsample_nearest2 needs at least 2-d input, got shape {x.shape}")
    out = np.repeat(np.repeat(x.data, 2, axis=-1), 2, axis=-2)
    h, w = x.shape[-2], x.shape[-1]
    lead = x.shape[:-2]

    def back(g):
        return (g.reshape(lead + (h, 2, w, 2)).sum(axis=(-3, -1)),)

    return _make(out, (x,), back)


# ---------------------------------------------------------------------------
# normalization / attention (composed from primitives)
# ---------------------------------------------------------------------------

def group_norm(x, num_groups, gamma, beta_shift, eps=1e-5):
    """Per-group standardization followed by per-channel affine."""
    x = _wrap(x)
    squeezed = x.ndim == 3
    if squeezed:
        x = reshape(x, (1,) + x.shape)
    n, c = x.shape[0], x.shape[1]
    if c % num_groups:
        raise ShapeError(f"{c} channels not divisible by {num_groups} groups")
    spatial = x.shape[2:]
    xg = reshape(x, (n, num_groups, -1))
    mu = reduce_mean(xg, axes=(2,), keepdims=True)
    xc = sub(xg, mu)
    var = reduce_mean(mul(xc, xc), axes=(2,), keepdims=True)
    xn = div(xc, sqrt(add(var, eps)))
    out = reshape(xn, (n, c) + spatial)
    gamma = reshape(_wrap(gamma), (c,) + (1,) * len(spatial))
    beta_shift = reshape(_wrap(beta_shift), (c,) + (1,) * len(spatial))
    out = add(mul(out, gamma), beta_shift)
    if squeezed:
        out = reshape(out, out.shape[1:])
    return out


def self_attention(x, wq, bq, wk, bk, wv, bv, wo, bo):
    """Single-head dot-product attention over spatial positions of (C,H,W)."""
    x = _wrap(x)
    if x.ndim != 3:
        raise ShapeError(f"self_attention expects (C,H,W), got shape {x.shape}")
    c, h, w = x.shape
    q = reshape(conv2d(x, wq, bq), (c, h * w))
    k = reshape(conv2d(x, wk, bk), (c, h * w))
    v = reshape(conv2d(x, wv, bv), (c, h * w))
    scores = mul(matmul(transpose(q, (1, 0)), k), c ** -0.5)   # (HW, HW)
    attn = softmax(scores, axis=1)                             # rows sum to 1 over keys
    out = matmul(v, transpose(attn, (1, 0)))                   # (C, HW)
    out = reshape(out, (c, h, w))
    return conv2d(out, wo, bo)


# ---------------------------------------------------------------------------
# rng / init / gradient checking
# ---------------------------------------------------------------------------

class Rng:
    """Counter-based generator (Philox); same seed gives identical streams."""

    def __init__(self, seed):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def uniform(self, shape=(), lo=0.0, hi=1.0, dtype=np.float32):
        return self._gen.uniform(lo, hi, size=shape).astype(dtype)

    def normal(self, shape=(), dtype=np.float32):
        return self._gen.standard_normal(size=shape).astype(dtype)

    def integers(self, lo, hi, shape=()):
        return self._gen.integers(lo, hi, size=shape)

    def permutation(self, n):
        return self._gen.permutation(n)

    def spawn(self, *key):
        """Independent stream derived from (seed, *key); deterministic."""
        child = Rng.__new__(Rng)
        child.seed = self.seed
        child._gen = np.random.Generator(np.random.Philox([self.seed, *map(int, key)]))
        return child

    def state(self):
        st = self._gen.bit_generator.state
        return {
            "seed": self.seed,
            "counter": [int(v) for v in st["state"]["counter"]],
            "key": [int(v) for v in st["state"]["key"]],
            "buffer": [int(v) for v in st["buffer"]],
            "buffer_pos": int(st["buffer_pos"]),
            "has_uint32": int(st["has_uint32"]),
            "uinteger": int(st["uinteger"]),
        }

    def set_state(self, state):
        self.seed = int(state["seed"])
        st = self._gen.bit_generator.state
        st["state"]["counter"] = np.array(state["counter"], dtype=np.uint64)
        st["state"]["key"] = np.array(state["key"], dtype=np.uint64)
        st["buffer"] = np.array(state["buffer"], dtype=np.uint64)
        st["buffer_pos"] = state["buffer_pos"]
        st["has_uint32"] = state["has_uint32"]
        st["uinteger"] = state["uinteger"]
        self._gen.bit_generator.state = st


def kaiming_uniform(rng, shape, fan_in):
    """Kaiming-uniform fan-in initialization."""
    bound = math.sqrt(6.0 / max(fan_in, 1))
    return rng.uniform(shape, -bound, bound)


def grad_check(f, inputs, h=1e-3, samples=None, rng=None, skip_kinks=False,
               floor=1e-8):
    """Max relative error between analytic gradients of f and central differences.

    The whole check runs in float64; f must be a pure scalar-valued function of
    the given tensors.  `samples` limits the number of coordinates probed per
    input (all coordinates when None).  `floor` sets the denominator floor of
    the relative error; raise it when coordinates with an exactly-zero true
    gradient would otherwise amplify finite-difference roundoff (the noise
    scale is eps·|f|/h).  With `skip_kinks`, coordinates where
    the one-sided differences disagree badly (an |x|-style non-differentiable
    point inside the probe interval, where central differencing is invalid)
    are excluded.
    """
    xs = [Tensor(np.asarray(t.data if isinstance(t, Tensor) else t, dtype=np.float64),
                 requires_grad=True) for t in inputs]
    loss = f(*xs)
    if loss.data.size != 1:
        raise ShapeError("grad_check target must be scalar-valued")
    f0 = loss.item()
    loss.backward()
    analytic = [np.zeros_like(x.data) if x.grad is None else x.grad for x in xs]
    if rng is None:
        rng = Rng(0)
    max_err = 0.0
    for xi, x in enumerate(xs):
        flat = x.data.reshape(-1)
        n = flat.size
        if samples is not None and samples < n:
            coords = sorted(set(int(i) for i in rng.integers(0, n, (samples,))))
        else:
            coords = range(n)
        ana = analytic[xi].reshape(-1)
        for c in coords:
            orig = flat[c]
            with no_grad():
                flat[c] = orig + h
                fp = f(*xs).item()
                flat[c] = orig - h
                fm = f(*xs).item()
            flat[c] = orig
            num = (fp - fm) / (2.0 * h)
            if skip_kinks:
                dp = (fp - f0) / h
                dm = (f0 - fm) / h
                if abs(dp - dm) > 0.3 * max(abs(dp), abs(dm), 1e-6):
                    continue
            err = abs(ana[c] - num) / max(abs(ana[c]), abs(num), floor)
            max_err = max(max_err, err)
    return max_err
