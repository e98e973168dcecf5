"""Image formation model and its parameter-free inverse."""
import numpy as np
import pytest

from seaclear import physics
from seaclear.tensor import DomainError, ShapeError, Tensor


def test_degrade_analytic():
    out = physics.degrade(0.8, 0.5, 0.2)
    assert np.isclose(out.item(), 0.5)


def test_enhance_analytic():
    out = physics.enhance(0.5, 0.5, 0.2)
    assert np.isclose(out.item(), 0.8)


def test_degrade_t1_is_identity(np_rng):
    img = np_rng.uniform(0, 1, (3, 8, 8)).astype(np.float32)
    out = physics.degrade(img, np.ones((8, 8), np.float32), 0.5)
    assert np.allclose(out.data, img, atol=1e-7)


def test_degrade_t0_is_background(np_rng):
    img = np_rng.uniform(0, 1, (3, 8, 8)).astype(np.float32)
    b = np_rng.uniform(0, 1, (8, 8)).astype(np.float32)
    out = physics.degrade(img, np.zeros((8, 8), np.float32), b)
    assert np.allclose(out.data, np.broadcast_to(b, (3, 8, 8)), atol=1e-7)


def test_roundtrip_property(np_rng):
    """enhance(degrade(I,t,b),t,b) = I for t >= t_min, max abs error <= 1e-5."""
    worst = 0.0
    for _ in range(200):
        img = np_rng.uniform(0, 1, (3, 8, 8)).astype(np.float32)
        t = np_rng.uniform(0.1, 1.0, (8, 8)).astype(np.float32)
        b = np_rng.uniform(0, 1, (8, 8)).astype(np.float32)
        rec = physics.enhance(physics.degrade(img, t, b), t, b)
        worst = max(worst, float(np.abs(rec.data - img).max()))
    assert worst <= 1e-5


def test_enhance_clamps_small_transmission():
    # t below t_min: division uses the clamped value, capping amplification
    out = physics.enhance(0.5, 0.01, 0.0, t_min=0.1)
    assert np.isclose(out.item(), 0.5 / 0.1)


def test_transmission_from_depth():
    t = physics.transmission_from_depth(np.array([0.0, 1.0, 2.0], np.float32), 0.5)
    assert np.allclose(t.data, np.exp([-0.0, -0.5, -1.0]), atol=1e-6)
    with pytest.raises(DomainError):
        physics.transmission_from_depth(np.array([-1.0], np.float32), 0.5)
    with pytest.raises(DomainError):
        physics.transmission_from_depth(np.array([1.0], np.float32), -0.5)


def test_expected_transmission_consistent_triple(np_rng):
    img = np_rng.uniform(0, 1, (3, 16, 16)).astype(np.float32)
    t = np_rng.uniform(0.2, 0.95, (16, 16)).astype(np.float32)
    b = np_rng.uniform(0.1, 0.9, (16, 16)).astype(np.float32)
    deg = physics.degrade(img, t, b)
    rec = physics.expected_transmission(deg, Tensor(img), Tensor(b)).data
    mask = (np.abs(img - b) >= 0.05).all(axis=0)
    assert mask.any()
    assert np.abs(rec - t)[mask].mean() <= 1e-3


def test_expected_transmission_clamped_and_detached(np_rng):
    img = np_rng.uniform(0, 1, (3, 8, 8)).astype(np.float32)
    deg = Tensor(np_rng.uniform(0, 1, (3, 8, 8)).astype(np.float32))
    b = Tensor(np_rng.uniform(0, 1, (8, 8)).astype(np.float32), requires_grad=True)
    out = physics.expected_transmission(deg, Tensor(img), b)
    assert out.data.min() >= 0.0 and out.data.max() <= 1.0
    assert out.requires_grad is False


def test_shape_and_domain_errors():
    img = np.ones((3, 8, 8), np.float32)
    with pytest.raises(ShapeError):
        physics.degrade(img, np.ones((4, 4), np.float32), 0.2)
    with pytest.raises(DomainError):
        physics.enhance(img, 0.5, 0.2, t_min=0.0)
    with pytest.raises(DomainError):
        physics.expected_transmission(Tensor(img), Tensor(img), Tensor(0.5), eps=0.0)
