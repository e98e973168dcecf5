"""PSNR/SSIM against analytic cases and independent definitional oracles."""
import math

import numpy as np
import pytest
from scipy.signal import correlate2d

from seaclear.metrics import (
    SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW, metric_report, psnr, ssim,
)
from seaclear.tensor import ShapeError


def _gauss2d():
    r = np.arange(SSIM_WINDOW, dtype=np.float64) - (SSIM_WINDOW - 1) / 2
    g = np.exp(-(r ** 2) / (2 * SSIM_SIGMA ** 2))
    g /= g.sum()
    return np.outer(g, g)


def _ssim_oracle(a, b):
    """Definitional single-scale SSIM with an explicit 2D window (valid mode)."""
    if a.ndim == 2:
        a, b = a[None], b[None]
    w = _gauss2d()
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    vals = []
    for c in range(a.shape[0]):
        x, y = a[c].astype(np.float64), b[c].astype(np.float64)
        mx = correlate2d(x, w, mode="valid")
        my = correlate2d(y, w, mode="valid")
        vx = correlate2d(x * x, w, mode="valid") - mx ** 2
        vy = correlate2d(y * y, w, mode="valid") - my ** 2
        cov = correlate2d(x * y, w, mode="valid") - mx * my
        m = ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2))
        vals.append(m.mean())
    return float(np.mean(vals))


def test_psnr_uniform_diff_analytic():
    a = np.zeros((3, 16, 16))
    b = np.full((3, 16, 16), 0.1)
    assert psnr(a, b) == pytest.approx(20.0, abs=0.01)


def test_psnr_identical_is_infinite():
    a = np.random.default_rng(0).uniform(0, 1, (3, 8, 8))
    assert psnr(a, a) == math.inf


def test_psnr_symmetric(np_rng):
    a = np_rng.uniform(0, 1, (3, 8, 8))
    b = np_rng.uniform(0, 1, (3, 8, 8))
    assert psnr(a, b) == pytest.approx(psnr(b, a), rel=1e-12)


def test_psnr_oracle_random_pairs(np_rng):
    for _ in range(100):
        a = np_rng.uniform(0, 1, (3, 8, 8))
        b = np_rng.uniform(0, 1, (3, 8, 8))
        want = 10 * math.log10(1.0 / np.mean((a.astype(np.float64) - b) ** 2))
        assert psnr(a, b) == pytest.approx(want, rel=1e-12)


def test_psnr_monotone_noise_ladder(np_rng):
    a = np_rng.uniform(0.3, 0.7, (3, 16, 16))
    noise = np_rng.normal(0, 1, a.shape)
    vals = [psnr(a, a + amp * noise) for amp in (0.01, 0.02, 0.05, 0.1)]
    assert all(x > y for x, y in zip(vals, vals[1:]))


def test_ssim_self_is_one(np_rng):
    a = np_rng.uniform(0, 1, (3, 16, 16))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-9)


def test_ssim_symmetric(np_rng):
    a = np_rng.uniform(0, 1, (3, 16, 16))
    b = np_rng.uniform(0, 1, (3, 16, 16))
    assert ssim(a, b) == pytest.approx(ssim(b, a), rel=1e-12)


def test_ssim_oracle_random_pairs(np_rng):
    for _ in range(100):
        a = np_rng.uniform(0, 1, (3, 12, 12))
        b = np.clip(a + np_rng.normal(0, 0.1, a.shape), 0, 1)
        assert ssim(a, b) == pytest.approx(_ssim_oracle(a, b), abs=1e-9)


def test_ssim_below_one_for_different_images(np_rng):
    a = np_rng.uniform(0, 1, (16, 16))
    b = np.clip(a + 0.2 * np_rng.normal(0, 1, a.shape), 0, 1)
    assert ssim(a, b) < 1.0


def test_shape_guards(np_rng):
    with pytest.raises(ShapeError):
        psnr(np.zeros((3, 4, 4)), np.zeros((3, 5, 5)))
    with pytest.raises(ShapeError):
        ssim(np.zeros((3, 8, 8)), np.zeros((3, 8, 8)))  # smaller than the window


def test_metric_report(np_rng):
    a = np_rng.uniform(0, 1, (3, 16, 16))
    r = metric_report(a, a)
    assert r.psnr == math.inf
    assert r.ssim == pytest.approx(1.0, abs=1e-9)
