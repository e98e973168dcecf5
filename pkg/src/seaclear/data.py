"""Image I/O, augmentation, and the synthetic paired-dataset generator.

Images move through this module as float32 (3,H,W) numpy arrays in [0,1];
binary PPM (P6, maxval 255) is the golden on-disk format and round-trips
bit-exactly at 8 bits.  PNG is supported behind the same interface via Pillow.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, asdict

import numpy as np
from scipy import ndimage

from . import physics
from .tensor import Rng, Tensor


class PpmError(ValueError):
    """Base class for PPM decode failures."""


class PpmHeaderError(PpmError):
    """Malformed or unsupported PPM header."""


class PpmTruncatedError(PpmError):
    """Pixel payload shorter than the header promises."""


class PpmMaxvalError(PpmError):
    """Maxval other than 255."""


@dataclass
class SyntheticConfig:
    seed: int = 0
    size: tuple = (32, 32)
    t_lo: float = 0.2            # keeps training away from the enhancer clamp
    t_hi: float = 0.95
    b_lo: float = 0.1
    b_hi: float = 0.9
    sigma_field: float = 8.0
    count: int = 64

    def __post_init__(self):
        self.size = tuple(self.size)
        if not 0.0 <= self.t_lo < self.t_hi <= 1.0:
            raise ValueError("transmission range must satisfy 0 <= lo < hi <= 1")
        if not 0.0 <= self.b_lo < self.b_hi <= 1.0:
            raise ValueError("background range must satisfy 0 <= lo < hi <= 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class PairedSample:
    clear: np.ndarray
    degraded: np.ndarray
    t: np.ndarray
    b: np.ndarray


# ---------------------------------------------------------------------------
# PPM / PNG I/O
# ---------------------------------------------------------------------------

def _read_ppm_tokens(buf, count):
    """Pull `count` whitespace-separated header tokens, skipping # comments."""
    tokens = []
    pos = 0
    while len(tokens) < count:
        if pos >= len(buf):
            raise PpmHeaderError("unexpected end of file inside header")
        ch = buf[pos:pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            nl = buf.find(b"\n", pos)
            pos = len(buf) if nl < 0 else nl + 1
        else:
            end = pos
            while end < len(buf) and not buf[end:end + 1].isspace():
                end += 1
            tokens.append(buf[pos:end])
            pos = end
    return tokens, pos + 1  # single whitespace byte terminates the header


def read_ppm(path):
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:2] != b"P6":
        raise PpmHeaderError(f"not a binary PPM (magic {buf[:2]!r})")
    tokens, offset = _read_ppm_tokens(buf[2:], 3)
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError:
        raise PpmHeaderError(f"non-numeric header fields {tokens}") from None
    if w <= 0 or h <= 0:
        raise PpmHeaderError(f"non-positive dimensions {w}x{h}")
    if maxval != 255:
        raise PpmMaxvalError(f"unsupported maxval {maxval} (only 255)")
    payload = buf[2 + offset:]
    need = w * h * 3
    if len(payload) < need:
        raise PpmTruncatedError(f"payload has {len(payload)} bytes, expected {need}")
    pix = np.frombuffer(payload[:need], dtype=np.uint8).reshape(h, w, 3)
    return (pix.transpose(2, 0, 1).astype(np.float32) / 255.0)


def write_ppm(path, img):
    data = quantize(img)
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (data.shape[2], data.shape[1]))
        f.write(data.transpose(1, 2, 0).tobytes())


def quantize(img):
    """Clamp to [0,1] and round to 8-bit, matching the on-disk representation."""
    img = np.asarray(img, dtype=np.float32)
    return np.clip(np.rint(np.clip(img, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)


def read_image(path):
    if str(path).lower().endswith(".ppm"):
        return read_ppm(path)
    from PIL import Image
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return arr.transpose(2, 0, 1).astype(np.float32) / 255.0


def write_image(path, img):
    if str(path).lower().endswith(".ppm"):
        write_ppm(path, img)
        return
    from PIL import Image
    Image.fromarray(quantize(img).transpose(1, 2, 0)).save(path)


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

def random_crop_flip(img, size, rng):
    """Uniformly positioned crop to `size` (h, w), then a 0.5-probability h-flip."""
    h, w = img.shape[-2:]
    ch, cw = size
    if ch > h or cw > w:
        raise ValueError(f"crop {size} larger than image {(h, w)}")
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    out = img[..., top:top + ch, left:left + cw]
    if rng.uniform() < 0.5:
        out = out[..., ::-1]
    return np.ascontiguousarray(out)


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

def smooth_field(rng, shape, lo, hi, sigma):
    """Blurred white noise rescaled to exactly span [lo, hi]."""
    if lo >= hi:
        raise ValueError("field range must satisfy lo < hi")
    noise = rng.uniform(shape).astype(np.float64)
    field = ndimage.gaussian_filter(noise, sigma, mode="reflect")
    fmin, fmax = field.min(), field.max()
    if fmax - fmin < 1e-12:
        field = np.full(shape, 0.5 * (lo + hi))
    else:
        field = lo + (field - fmin) * ((hi - lo) / (fmax - fmin))
    return field.astype(np.float32)


def synth_clear_image(rng, size):
    """Procedural clear image: smooth color gradients plus a few soft blobs.

    Deliberately low-frequency so a small decoder can learn the family from a
    handful of examples; harder content just measures model capacity.
    """
    h, w = size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    yy /= max(h - 1, 1)
    xx /= max(w - 1, 1)
    img = np.zeros((3, h, w), dtype=np.float32)
    for c in range(3):
        a, b_ = rng.uniform((2,), -0.35, 0.35)
        img[c] = 0.5 + a * (yy - 0.5) + b_ * (xx - 0.5)
    nblobs = int(rng.integers(1, 3))
    for _ in range(nblobs):
        cy, cx = rng.uniform((2,), 0.2, 0.8)
        radius = float(rng.uniform((), 0.25, 0.45))
        color = rng.uniform((3,), -0.5, 0.5)
        d2 = ((yy - cy) ** 2 + (xx - cx) ** 2) / radius ** 2
        blob = np.exp(-d2)
        img += color[:, None, None] * blob[None]
    return np.clip(img, 0.0, 1.0)


def toy_synthetic_config(**overrides):
    """Severe-degradation preset for the desk-scale training demo.

    The default field ranges produce mild casts (degraded baseline ~17 dB
    PSNR), leaving little headroom for a small model to show a gain; this
    preset pushes transmission low and background high so enhancement has
    several dB to recover.
    """
    defaults = dict(seed=0, size=(32, 32), count=64,
                    t_lo=0.1, t_hi=0.3, b_lo=0.5, b_hi=0.98)
    defaults.update(overrides)
    return SyntheticConfig(**defaults)


def make_synthetic_pair(clear, cfg, rng):
    """Degrade a clear image with smooth random transmission/background fields."""
    h, w = clear.shape[-2:]
    t = smooth_field(rng, (h, w), cfg.t_lo, cfg.t_hi, cfg.sigma_field)
    b = smooth_field(rng, (h, w), cfg.b_lo, cfg.b_hi, cfg.sigma_field)
    degraded = physics.degrade(Tensor(clear), Tensor(t), Tensor(b)).data
    return PairedSample(clear=clear, degraded=degraded, t=t, b=b)


def make_synthetic_dataset(cfg):
    """cfg.count paired samples, fully determined by cfg.seed."""
    rng = Rng(cfg.seed)
    samples = []
    for _ in range(cfg.count):
        clear = synth_clear_image(rng, cfg.size)
        samples.append(make_synthetic_pair(clear, cfg, rng))
    return samples


# ---------------------------------------------------------------------------
# on-disk paired layout:  <root>/clear/<name>.ppm, <root>/degraded/<name>.ppm,
# optional <root>/physics/<name>.npz with float32 t and b fields.
# ---------------------------------------------------------------------------

def save_paired_dataset(root, samples):
    """Write samples; degraded files are the exact quantized re-degradation of
    the quantized clear files, so the pairing can be verified bit-exactly."""
    for sub in ("clear", "degraded", "physics"):
        os.makedirs(os.path.join(root, sub), exist_ok=True)
    for i, s in enumerate(samples):
        name = f"{i:05d}"
        clear_q = quantize(s.clear).astype(np.float32) / 255.0
        degraded = physics.degrade(Tensor(clear_q), Tensor(s.t), Tensor(s.b)).data
        write_ppm(os.path.join(root, "clear", name + ".ppm"), clear_q)
        write_ppm(os.path.join(root, "degraded", name + ".ppm"), degraded)
        np.savez(os.path.join(root, "physics", name + ".npz"), t=s.t, b=s.b)


def load_paired_dataset(root):
    clear_dir = os.path.join(root, "clear")
    deg_dir = os.path.join(root, "degraded")
    phys_dir = os.path.join(root, "physics")
    names = sorted(n for n in os.listdir(clear_dir) if n.endswith(".ppm"))
    if not names:
        raise FileNotFoundError(f"no .ppm files under {clear_dir}")
    samples = []
    for name in names:
        clear = read_ppm(os.path.join(clear_dir, name))
        degraded = read_ppm(os.path.join(deg_dir, name))
        npz_path = os.path.join(phys_dir, name[:-4] + ".npz")
        if os.path.exists(npz_path):
            with np.load(npz_path) as z:
                t, b = z["t"], z["b"]
        else:
            t = b = None
        samples.append(PairedSample(clear=clear, degraded=degraded, t=t, b=b))
    return samples


def verify_pairs(root):
    """Check that every stored degraded file is the quantized re-degradation of
    its clear file under the stored physics fields.  Returns mismatch names."""
    bad = []
    for i, s in enumerate(load_paired_dataset(root)):
        if s.t is None:
            bad.append(f"{i:05d} (missing physics fields)")
            continue
        redone = physics.degrade(Tensor(s.clear), Tensor(s.t), Tensor(s.b)).data
        if not np.array_equal(quantize(redone), quantize(s.degraded)):
            bad.append(f"{i:05d}")
    return bad


def dataset_iter(samples, batch_size, rng, epochs=None):
    """Shuffled fixed-size batches; the trailing partial batch is dropped.

    Yields lists of PairedSample.  With `epochs=None` the stream is endless.
    """
    if not samples:
        raise ValueError("empty dataset")
    if batch_size > len(samples):
        raise ValueError(f"batch size {batch_size} exceeds dataset size {len(samples)}")
    epoch = 0
    while epochs is None or epoch < epochs:
        order = rng.permutation(len(samples))
        for start in range(0, len(samples) - batch_size + 1, batch_size):
            yield [samples[i] for i in order[start:start + batch_size]]
        epoch += 1
