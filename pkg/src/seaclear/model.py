"""Full enhancement pipeline: encoder, capsule stream, latent fusion, decoder,
physics estimator, and the parameter-free physics enhancer.

Parameters live in a flat name->Tensor dict so the optimizer and checkpoint
code can stay generic.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import physics
from .capsule import CapsuleConfig, capsule_stream
from .tensor import (
    ShapeError, Tensor, add, concat, conv2d, group_norm, kaiming_uniform,
    narrow, reshape, self_attention, sigmoid, silu, upsample_nearest2,
)

FUSION_MODES = ("residual", "concat", "direct")
PSI_MODES = ("physics", "none", "conv")


@dataclass
class ModelConfig:
    in_channels: int = 3
    image_size: int = 256
    enc_channels: tuple = (64, 128, 128, 256)
    latent_channels: int = 256
    gn_groups: int = 32
    fusion: str = "residual"
    capsule: CapsuleConfig = field(default_factory=CapsuleConfig)
    est_channels: tuple = (32, 64, 64, 32)
    t_min: float = physics.T_MIN_DEFAULT
    psi_mode: str = "physics"

    def __post_init__(self):
        if isinstance(self.capsule, dict):
            self.capsule = CapsuleConfig(**self.capsule)
        self.enc_channels = tuple(self.enc_channels)
        self.est_channels = tuple(self.est_channels)
        if self.fusion not in FUSION_MODES:
            raise ValueError(f"fusion mode must be one of {FUSION_MODES}")
        if self.psi_mode not in PSI_MODES:
            raise ValueError(f"psi mode must be one of {PSI_MODES}")
        if self.image_size % (2 ** len(self.enc_channels)):
            raise ValueError("image size must be divisible by 2^stages")

    @property
    def stages(self):
        return len(self.enc_channels)

    def latent_hw(self, image_size=None):
        return (image_size or self.image_size) // (2 ** self.stages)

    def to_dict(self):
        return asdict(self)


def toy_model_config(**overrides):
    """Small configuration for fast tests: 3x32x32 in, 16x4x4 latent, 3x3 capsule grid."""
    base = dict(
        image_size=32,
        enc_channels=(8, 16, 16),
        latent_channels=16,
        gn_groups=4,
        capsule=CapsuleConfig(beta=4, gamma=4, c_u=4, c_u_hat=4, kernel=2),
        est_channels=(8, 8),
    )
    base.update(overrides)
    return ModelConfig(**base)


@dataclass
class ModelOutput:
    enhanced: Tensor
    tilde: Tensor
    t_hat: Tensor
    b_hat: Tensor
    latent: Tensor


def _groups(cfg, channels):
    if channels % cfg.gn_groups:
        raise ShapeError(f"{channels} channels not divisible by {cfg.gn_groups} groups")
    return cfg.gn_groups


# ---------------------------------------------------------------------------
# parameter construction
# ---------------------------------------------------------------------------

def _conv_spec(specs, name, c_out, c_in, k):
    specs[f"{name}.w"] = ("conv", (c_out, c_in, k, k), c_in * k * k)
    specs[f"{name}.b"] = ("bias", (c_out,), 0)


def _norm_spec(specs, name, c):
    specs[f"{name}.g"] = ("gamma", (c,), 0)
    specs[f"{name}.s"] = ("beta", (c,), 0)


def _resblock_spec(specs, name, c_in, c_out):
    _norm_spec(specs, f"{name}.n1", c_in)
    _conv_spec(specs, f"{name}.c1", c_out, c_in, 3)
    _norm_spec(specs, f"{name}.n2", c_out)
    _conv_spec(specs, f"{name}.c2", c_out, c_out, 3)
    if c_in != c_out:
        _conv_spec(specs, f"{name}.skip", c_out, c_in, 1)


def param_specs(cfg):
    """name -> (kind, shape, fan_in) for every trainable parameter."""
    specs = {}
    ch = cfg.enc_channels
    _conv_spec(specs, "enc.stem", ch[0], cfg.in_channels, 3)
    prev = ch[0]
    for i, c in enumerate(ch):
        _resblock_spec(specs, f"enc.res{i}", prev, c)
        _conv_spec(specs, f"enc.down{i}", c, c, 3)
        prev = c
    for nm in ("q", "k", "v", "o"):
        _conv_spec(specs, f"enc.attn.{nm}", prev, prev, 1)
    _norm_spec(specs, "enc.norm", prev)
    _conv_spec(specs, "enc.out", cfg.latent_channels, prev, 3)

    cap = cfg.capsule
    for i in range(cap.beta):
        _conv_spec(specs, f"caps.primary.{i}", cap.c_u, cfg.latent_channels, cap.kernel)
    specs["caps.W"] = ("affine", (cap.beta, cap.gamma, cap.c_u_hat, cap.c_u), cap.c_u)
    specs["caps.proj.w"] = ("conv", (cap.beta, cfg.latent_channels, cap.kernel, cap.kernel),
                            cap.beta * cap.kernel * cap.kernel)
    specs["caps.proj.b"] = ("bias", (cfg.latent_channels,), 0)

    if cfg.fusion == "concat":
        _conv_spec(specs, "fuse", cfg.latent_channels, 2 * cfg.latent_channels, 1)

    prev = cfg.latent_channels
    for i, c in enumerate(reversed(ch)):
        _resblock_spec(specs, f"dec.res{i}", prev, c)
        _conv_spec(specs, f"dec.up{i}", c, c, 3)
        prev = c
    _norm_spec(specs, "dec.norm", prev)
    _conv_spec(specs, "dec.out", cfg.in_channels, prev, 3)

    prev = cfg.in_channels
    for i, c in enumerate(cfg.est_channels):
        _conv_spec(specs, f"est.c{i}", c, prev, 3)
        prev = c
    _conv_spec(specs, "est.out", 2, prev, 3)

    if cfg.psi_mode == "conv":
        _conv_spec(specs, "psi.conv", cfg.in_channels, cfg.in_channels + 2, 3)
    return specs


def init_params(cfg, rng):
    """Kaiming-uniform conv weights, zero biases, identity normalization."""
    params = {}
    for name, (kind, shape, fan_in) in param_specs(cfg).items():
        if kind in ("conv", "affine"):
            data = kaiming_uniform(rng, shape, fan_in)
        elif kind == "gamma":
            data = np.ones(shape, dtype=np.float32)
        else:  # bias / beta
            data = np.zeros(shape, dtype=np.float32)
        params[name] = Tensor(data, requires_grad=True)
    return params


def param_count(params):
    return sum(p.size for p in params.values())


# ---------------------------------------------------------------------------
# forward pieces
# ---------------------------------------------------------------------------

def _resblock(x, params, name, cfg):
    c_in = x.shape[0]
    h = group_norm(x, _groups(cfg, c_in), params[f"{name}.n1.g"], params[f"{name}.n1.s"])
    h = conv2d(silu(h), params[f"{name}.c1.w"], params[f"{name}.c1.b"], 1, 1)
    c_out = h.shape[0]
    h = group_norm(h, _groups(cfg, c_out), params[f"{name}.n2.g"], params[f"{name}.n2.s"])
    h = conv2d(silu(h), params[f"{name}.c2.w"], params[f"{name}.c2.b"], 1, 1)
    skip = x
    if c_in != c_out:
        skip = conv2d(x, params[f"{name}.skip.w"], params[f"{name}.skip.b"], 1, 0)
    return add(skip, h)


def encode(deg, params, cfg):
    """Degraded image -> latent X of shape (latent_channels, H/2^N, W/2^N)."""
    if deg.ndim != 3 or deg.shape[0] != cfg.in_channels:
        raise ShapeError(f"expected ({cfg.in_channels},H,W) input, got {deg.shape}")
    if deg.shape[1] % (2 ** cfg.stages) or deg.shape[2] % (2 ** cfg.stages):
        raise ShapeError(f"spatial extents {deg.shape[1:]} not divisible by 2^{cfg.stages}")
    h = conv2d(deg, params["enc.stem.w"], params["enc.stem.b"], 1, 1)
    for i in range(cfg.stages):
        h = _resblock(h, params, f"enc.res{i}", cfg)
        h = conv2d(h, params[f"enc.down{i}.w"], params[f"enc.down{i}.b"], 2, 1)
    attn = self_attention(
        h,
        params["enc.attn.q.w"], params["enc.attn.q.b"],
        params["enc.attn.k.w"], params["enc.attn.k.b"],
        params["enc.attn.v.w"], params["enc.attn.v.b"],
        params["enc.attn.o.w"], params["enc.attn.o.b"])
    h = add(h, attn)
    h = group_norm(h, _groups(cfg, h.shape[0]), params["enc.norm.g"], params["enc.norm.s"])
    return conv2d(silu(h), params["enc.out.w"], params["enc.out.b"], 1, 1)


def physics_estimate(deg, params, cfg):
    """Predict (transmission, background) maps, sigmoid-bounded to (0,1)."""
    h = deg
    for i in range(len(cfg.est_channels)):
        h = silu(conv2d(h, params[f"est.c{i}.w"], params[f"est.c{i}.b"], 1, 1))
    out = sigmoid(conv2d(h, params["est.out.w"], params["est.out.b"], 1, 1))
    hw = out.shape[1:]
    t_hat = reshape(narrow(out, 0, 0, 1), hw)
    b_hat = reshape(narrow(out, 0, 1, 1), hw)
    return t_hat, b_hat


def fuse_latent(x, c, mode, params=None):
    if mode == "residual":
        return add(x, c)
    if mode == "direct":
        return c
    if mode == "concat":
        return conv2d(concat([x, c], axis=0), params["fuse.w"], params["fuse.b"], 1, 0)
    raise ValueError(f"unknown fusion mode {mode!r}")


def decode(x_hat, params, cfg):
    """Latent -> image-like output (3, H, W); values unbounded."""
    h = x_hat
    for i in range(cfg.stages):
        h = _resblock(h, params, f"dec.res{i}", cfg)
        h = upsample_nearest2(h)
        h = conv2d(h, params[f"dec.up{i}.w"], params[f"dec.up{i}.b"], 1, 1)
    h = group_norm(h, _groups(cfg, h.shape[0]), params["dec.norm.g"], params["dec.norm.s"])
    return conv2d(silu(h), params["dec.out.w"], params["dec.out.b"], 1, 1)


def forward(deg, params, cfg, force_t_hat=None):
    """Full pipeline; `force_t_hat` overrides the estimated transmission (tests)."""
    x = encode(deg, params, cfg)
    t_hat, b_hat = physics_estimate(deg, params, cfg)
    if force_t_hat is not None:
        t_hat = force_t_hat
    c, _ = capsule_stream(x, params, "caps", cfg.capsule)
    x_hat = fuse_latent(x, c, cfg.fusion, params)
    tilde = decode(x_hat, params, cfg)
    if cfg.psi_mode == "physics":
        enhanced = physics.enhance(tilde, t_hat, b_hat, cfg.t_min)
    elif cfg.psi_mode == "none":
        enhanced = tilde
    else:  # learned 3x3 conv in place of the analytic inverse
        hw = tilde.shape[1:]
        stacked = concat([tilde, reshape(t_hat, (1,) + hw), reshape(b_hat, (1,) + hw)], axis=0)
        enhanced = conv2d(stacked, params["psi.conv.w"], params["psi.conv.b"], 1, 1)
    return ModelOutput(enhanced=enhanced, tilde=tilde, t_hat=t_hat, b_hat=b_hat, latent=x_hat)
