"""End-to-end model: shapes, parameter accounting, fusion and enhancer modes."""
import numpy as np
import pytest

from seaclear.model import (
    FUSION_MODES, PSI_MODES, ModelConfig, forward, init_params, param_count,
    param_specs, toy_model_config,
)
from seaclear.capsule import CapsuleConfig
from seaclear.tensor import Rng, ShapeError, Tensor, no_grad


@pytest.fixture(scope="module")
def toy():
    cfg = toy_model_config()
    return cfg, init_params(cfg, Rng(0))


def test_config_validation():
    with pytest.raises(ValueError):
        toy_model_config(fusion="blend")
    with pytest.raises(ValueError):
        toy_model_config(psi_mode="identity")
    with pytest.raises(ValueError):
        ModelConfig(image_size=100, enc_channels=(8, 16, 16))  # 100 % 8 != 0


def test_toy_latent_shape():
    cfg = toy_model_config()
    assert cfg.latent_hw() == 4
    assert cfg.latent_channels == 16


def test_forward_shapes(toy, np_rng):
    cfg, params = toy
    img = np_rng.uniform(0, 1, (3, 32, 32)).astype(np.float32)
    with no_grad():
        out = forward(Tensor(img), params, cfg)
    assert out.enhanced.shape == (3, 32, 32)
    assert out.tilde.shape == (3, 32, 32)
    assert out.t_hat.shape == (32, 32)
    assert out.b_hat.shape == (32, 32)
    assert out.latent.shape == (16, 4, 4)
    assert 0.0 < out.t_hat.data.min() and out.t_hat.data.max() < 1.0
    assert 0.0 < out.b_hat.data.min() and out.b_hat.data.max() < 1.0


def test_param_count_matches_independent_tally(toy):
    """Shape-arithmetic tally computed here without param_specs internals."""
    cfg, params = toy

    def conv(cout, cin, k):
        return cout * cin * k * k + cout

    def norm(c):
        return 2 * c

    def resblock(cin, cout):
        n = norm(cin) + conv(cout, cin, 3) + norm(cout) + conv(cout, cout, 3)
        if cin != cout:
            n += conv(cout, cin, 1)
        return n

    ch = cfg.enc_channels
    total = conv(ch[0], 3, 3)
    prev = ch[0]
    for c in ch:
        total += resblock(prev, c) + conv(c, c, 3)
        prev = c
    total += 4 * conv(prev, prev, 1)            # attention q/k/v/o
    total += norm(prev) + conv(cfg.latent_channels, prev, 3)

    cap = cfg.capsule
    total += cap.beta * conv(cap.c_u, cfg.latent_channels, cap.kernel)
    total += cap.beta * cap.gamma * cap.c_u_hat * cap.c_u          # routing affines
    total += cap.beta * cfg.latent_channels * cap.kernel ** 2 + cfg.latent_channels

    prev = cfg.latent_channels
    for c in reversed(ch):
        total += resblock(prev, c) + conv(c, c, 3)
        prev = c
    total += norm(prev) + conv(3, prev, 3)

    prev = 3
    for c in cfg.est_channels:
        total += conv(c, prev, 3)
        prev = c
    total += conv(2, prev, 3)

    assert param_count(params) == total


def test_init_determinism():
    cfg = toy_model_config()
    a = init_params(cfg, Rng(5))
    b = init_params(cfg, Rng(5))
    c = init_params(cfg, Rng(6))
    assert all(np.array_equal(a[k].data, b[k].data) for k in a)
    assert any(not np.array_equal(a[k].data, c[k].data) for k in a)


@pytest.mark.parametrize("mode", FUSION_MODES)
def test_fusion_modes_run(np_rng, mode):
    cfg = toy_model_config(fusion=mode)
    params = init_params(cfg, Rng(0))
    img = np_rng.uniform(0, 1, (3, 32, 32)).astype(np.float32)
    with no_grad():
        out = forward(Tensor(img), params, cfg)
    assert np.isfinite(out.enhanced.data).all()


def test_concat_fusion_has_extra_params():
    base = param_count(init_params(toy_model_config(), Rng(0)))
    cat = param_count(init_params(toy_model_config(fusion="concat"), Rng(0)))
    assert cat > base


@pytest.mark.parametrize("mode", PSI_MODES)
def test_psi_modes_run(np_rng, mode):
    cfg = toy_model_config(psi_mode=mode)
    params = init_params(cfg, Rng(0))
    img = np_rng.uniform(0, 1, (3, 32, 32)).astype(np.float32)
    with no_grad():
        out = forward(Tensor(img), params, cfg)
    assert np.isfinite(out.enhanced.data).all()


def test_psi_parameter_freeness():
    """The analytic enhancer adds no trainable parameters over a plain decoder."""
    on = param_count(init_params(toy_model_config(psi_mode="physics"), Rng(0)))
    off = param_count(init_params(toy_model_config(psi_mode="none"), Rng(0)))
    conv = param_count(init_params(toy_model_config(psi_mode="conv"), Rng(0)))
    assert on == off
    assert conv > on


def test_psi_none_is_identity_on_tilde(toy, np_rng):
    cfg = toy_model_config(psi_mode="none")
    params = init_params(cfg, Rng(0))
    img = np_rng.uniform(0, 1, (3, 32, 32)).astype(np.float32)
    with no_grad():
        out = forward(Tensor(img), params, cfg)
    assert np.array_equal(out.enhanced.data, out.tilde.data)


def test_force_t_hat_override(toy, np_rng):
    cfg, params = toy
    img = np_rng.uniform(0, 1, (3, 32, 32)).astype(np.float32)
    t = Tensor(np.full((32, 32), 0.5, np.float32))
    with no_grad():
        out = forward(Tensor(img), params, cfg, force_t_hat=t)
    assert np.array_equal(out.t_hat.data, t.data)


def test_oracle_physics_recovers_clear(np_rng):
    """With ideal tilde and maps injected, the enhancer inverts exactly."""
    from seaclear import physics
    clear = np_rng.uniform(0, 1, (3, 32, 32)).astype(np.float32)
    t = np_rng.uniform(0.2, 0.95, (32, 32)).astype(np.float32)
    b = np_rng.uniform(0.1, 0.9, (32, 32)).astype(np.float32)
    deg = physics.degrade(clear, t, b)
    rec = physics.enhance(deg, Tensor(t), Tensor(b))
    assert np.abs(rec.data - clear).max() <= 1e-5


def test_rejects_bad_input_shapes(toy):
    cfg, params = toy
    with pytest.raises(ShapeError):
        forward(Tensor(np.zeros((1, 32, 32), np.float32)), params, cfg)
    with pytest.raises(ShapeError):
        forward(Tensor(np.zeros((3, 30, 30), np.float32)), params, cfg)


def test_param_specs_cover_all_modes():
    specs = param_specs(toy_model_config(psi_mode="conv", fusion="concat"))
    assert "psi.conv.w" in specs
    assert "fuse.w" in specs
