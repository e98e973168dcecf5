"""Underwater image formation (Jaffe-McGlamery) and its parameter-free inverse.

Images are (3,H,W) tensors in [0,1]; transmission and background-light maps are
(H,W) and broadcast across the color channels.  Scalars are accepted anywhere a
map is and broadcast the same way.
"""
from __future__ import annotations

import numpy as np

from .tensor import (
    DomainError, ShapeError, Tensor, add, clamp_min, div, exp, mul, neg,
    reduce_mean, sub,
)

T_MIN_DEFAULT = 0.1   # division guard for the enhancer; caps amplification at 10x
EPS_DEFAULT = 1e-6    # denominator guard for expected-transmission recovery


def _as_map(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float32))


def _check_spatial(img, m, name):
    if m.ndim == 0:
        return
    if m.shape != img.shape[-2:]:
        raise ShapeError(
            f"{name} shape {m.shape} does not match image spatial extents {img.shape[-2:]}")


def degrade(clear, t, b):
    """Forward degradation: clear ⊙ t + b ⊙ (1 − t), t/b broadcast over channels."""
    clear, t, b = _as_map(clear), _as_map(t), _as_map(b)
    _check_spatial(clear, t, "transmission map")
    _check_spatial(clear, b, "background light")
    return add(mul(clear, t), mul(b, sub(1.0, t)))


def transmission_from_depth(depth, nu):
    """t = exp(−nu·d); depth in meters, nu the attenuation coefficient (1/m)."""
    depth = _as_map(depth)
    if nu < 0:
        raise DomainError("attenuation coefficient must be non-negative")
    if (depth.data < 0).any():
        idx = np.unravel_index(int(np.argmax(depth.data < 0)), depth.shape)
        raise DomainError(f"negative depth at index {idx}")
    return exp(neg(mul(depth, float(nu))))


def enhance(tilde, t_hat, b_hat, t_min=T_MIN_DEFAULT):
    """Invert the formation model: (tilde − b̂ ⊙ (1 − t)) ⊘ t with t = max(t̂, t_min).

    The result is intentionally unclamped; clamping happens only when saving.
    """
    tilde, t_hat, b_hat = _as_map(tilde), _as_map(t_hat), _as_map(b_hat)
    _check_spatial(tilde, t_hat, "transmission map")
    _check_spatial(tilde, b_hat, "background light")
    if t_min <= 0:
        raise DomainError("t_min must be positive")
    t = clamp_min(t_hat, float(t_min))
    return div(sub(tilde, mul(b_hat, sub(1.0, t))), t)


def expected_transmission(deg, clear, b_hat, eps=EPS_DEFAULT):
    """Recover t from a (degraded, clear, background) triple via the formation model.

    Per-channel ratio (deg − b̂) ⊘ (clear − b̂ + eps), reduced by channel mean and
    clamped to [0,1].  Runs detached from any tape: this is a supervision target.
    """
    deg, clear, b_hat = _as_map(deg), _as_map(clear), _as_map(b_hat)
    if deg.shape != clear.shape:
        raise ShapeError(f"degraded shape {deg.shape} != clear shape {clear.shape}")
    _check_spatial(deg, b_hat, "background light")
    if eps <= 0:
        raise DomainError("eps must be positive")
    d, c, b = deg.data, clear.data, np.broadcast_to(b_hat.data, deg.shape[-2:])
    ratio = (d - b) / (c - b + eps)
    t = ratio.mean(axis=0)
    return Tensor(np.clip(t, 0.0, 1.0))
