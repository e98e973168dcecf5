"""Full-reference image quality metrics (PSNR, single-scale SSIM).

Plain float64 numpy; no gradient participation.  Inputs are (3,H,W) or (H,W)
arrays (or tensors) with data range 1.0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class MetricReport:
    psnr: float
    ssim: float


def _arr(x):
    if isinstance(x, Tensor):
        x = x.data
    return np.asarray(x, dtype=np.float64)


def psnr(a, b):
    """10·log10(1/MSE) for data range 1; identical inputs give +inf."""
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise ShapeError(f"psnr shape mismatch: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _filter_valid(x, w):
    """Separable windowed correlation, valid positions only."""
    v = np.lib.stride_tricks.sliding_window_view(x, len(w), axis=0)
    x = np.tensordot(v, w, axes=([-1], [0]))
    v = np.lib.stride_tricks.sliding_window_view(x, len(w), axis=1)
    return np.tensordot(v, w, axes=([-1], [0]))


def _ssim_channel(a, b, window):
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    mu_a = _filter_valid(a, window)
    mu_b = _filter_valid(b, window)
    var_a = _filter_valid(a * a, window) - mu_a ** 2
    var_b = _filter_valid(b * b, window) - mu_b ** 2
    cov = _filter_valid(a * b, window) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a, b):
    """Single-scale SSIM with 11x11 Gaussian window, sigma 1.5, averaged over channels."""
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise ShapeError(f"ssim shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.shape[-1] < SSIM_WINDOW or a.shape[-2] < SSIM_WINDOW:
        raise ShapeError(f"image extents {a.shape[-2:]} smaller than {SSIM_WINDOW}x{SSIM_WINDOW} window")
    window = _gaussian_window()
    return float(np.mean([_ssim_channel(a[c], b[c], window) for c in range(a.shape[0])]))


def metric_report(a, b):
    return MetricReport(psnr=psnr(a, b), ssim=ssim(a, b))
