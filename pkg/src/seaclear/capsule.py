"""Primary capsule extraction, routing-by-agreement, and projection back to
latent feature maps.

Layout conventions:
  U     (beta, c_u, H, W)          primary capsules
  Uhat  (gamma, beta, c_u_hat, H, W) per-parent predictions
  b, c  (beta, gamma, H, W)        routing logits / coupling coefficients
  v     (gamma, c_u_hat, H, W)     parent activities
Routing runs independently at every grid location; gradients flow through all
unrolled iterations.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    ShapeError, Tensor, add, concat, conv2d, conv_transpose2d, div, l2norm,
    matmul, mul, reduce_sum, reshape, softmax, transpose,
)


@dataclass
class CapsuleConfig:
    beta: int = 32        # input (primary) capsules
    gamma: int = 32       # parent capsules
    c_u: int = 16         # primary capsule dimension
    c_u_hat: int = 16     # prediction dimension
    kernel: int = 8       # primary-conv / projection kernel (16x16 grid -> 9x9)
    routing_iters: int = 3

    def __post_init__(self):
        if min(self.beta, self.gamma, self.c_u, self.c_u_hat, self.kernel) < 1:
            raise ValueError("capsule dimensions must be positive")
        if self.routing_iters < 1:
            raise ValueError("routing_iters must be >= 1")

    def grid(self, latent_hw):
        """Capsule grid extent for a square latent of the given spatial size."""
        g = latent_hw - self.kernel + 1
        if g < 1:
            raise ShapeError(f"kernel {self.kernel} too large for latent {latent_hw}")
        return g


@dataclass
class CapsuleState:
    U: Tensor
    Uhat: Tensor
    c: Tensor
    v: Tensor


def primary_capsules(x, weights, biases):
    """beta parallel convolutions of the latent, stacked along a capsule axis.

    weights[i]: (c_u, C_X, k, k); output (beta, c_u, g, g).
    """
    if len(weights) != len(biases):
        raise ShapeError("per-capsule weight/bias counts differ")
    slices = []
    for w, b in zip(weights, biases):
        u = conv2d(x, w, b, stride=1, padding=0)
        slices.append(reshape(u, (1,) + u.shape))
    return concat(slices, axis=0)


def capsule_predictions(u, w):
    """Apply the per-(child, parent) affine maps at every grid location.

    u: (beta, c_u, H, W);  w: (beta, gamma, c_u_hat, c_u)
    returns (gamma, beta, c_u_hat, H, W).
    """
    beta, c_u, h, wd = u.shape
    if w.ndim != 4 or w.shape[0] != beta or w.shape[3] != c_u:
        raise ShapeError(f"prediction matrices {w.shape} do not match capsules {u.shape}")
    gamma, c_hat = w.shape[1], w.shape[2]
    ur = reshape(transpose(u, (0, 2, 3, 1)), (beta, 1, h * wd, c_u))
    wt = transpose(w, (0, 1, 3, 2))                       # (beta, gamma, c_u, c_u_hat)
    uh = matmul(ur, wt)                                   # (beta, gamma, HW, c_u_hat)
    uh = reshape(uh, (beta, gamma, h, wd, c_hat))
    return transpose(uh, (1, 0, 4, 2, 3))


def squash(s, axis=-1):
    """v = (‖s‖²/(1+‖s‖²))·(s/‖s‖) along `axis`; 0 maps to 0."""
    n = l2norm(s, axes=(axis,), keepdims=True, eps=1e-24)
    factor = div(n, add(mul(n, n), 1.0))
    return mul(s, factor)


def routing_by_agreement(uhat, iters):
    """Iterative coupling of child predictions to parent activities.

    Returns (c, v) from the final iteration; the logit update is skipped after
    the last pass so the returned c is the last softmax output.
    """
    if iters < 1:
        raise ValueError("routing needs at least one iteration")
    gamma, beta, c_hat, h, w = uhat.shape
    b = Tensor(np.zeros((beta, gamma, h, w), dtype=uhat.dtype))
    c = v = None
    for it in range(iters):
        c = softmax(b, axis=1)                                   # over parents
        cw = reshape(transpose(c, (1, 0, 2, 3)), (gamma, beta, 1, h, w))
        s = reduce_sum(mul(cw, uhat), axes=(1,))                 # (gamma, c_hat, H, W)
        v = squash(s, axis=1)
        if it + 1 < iters:
            agree = reduce_sum(mul(uhat, reshape(v, (gamma, 1, c_hat, h, w))), axes=(2,))
            b = add(b, transpose(agree, (1, 0, 2, 3)))
    return c, v


def weighted_predictions(uhat, c):
    """Collapse the parent axis: Û_i = Σ_j c_ij û_{j|i}; output (beta, c_u_hat, H, W)."""
    gamma, beta, c_hat, h, w = uhat.shape
    cw = reshape(transpose(c, (1, 0, 2, 3)), (gamma, beta, 1, h, w))
    return reduce_sum(mul(cw, uhat), axes=(0,))


def capsule_features(uw, w_proj, b_proj):
    """l2 norm over the capsule dimension, then a transposed-conv projection.

    uw: (beta, c_u_hat, g, g); w_proj: (beta, C_X, k, k); output (C_X, g+k-1, g+k-1).
    """
    norms = l2norm(uw, axes=(1,), eps=1e-24)          # (beta, g, g)
    return conv_transpose2d(norms, w_proj, b_proj, stride=1, padding=0)


def capsule_stream(x, params, prefix, cfg):
    """Full capsule pathway: latent X -> capsule feature maps C (same shape as X)."""
    weights = [params[f"{prefix}.primary.{i}.w"] for i in range(cfg.beta)]
    biases = [params[f"{prefix}.primary.{i}.b"] for i in range(cfg.beta)]
    u = primary_capsules(x, weights, biases)
    uhat = capsule_predictions(u, params[f"{prefix}.W"])
    c, v = routing_by_agreement(uhat, cfg.routing_iters)
    uw = weighted_predictions(uhat, c)
    feats = capsule_features(uw, params[f"{prefix}.proj.w"], params[f"{prefix}.proj.b"])
    return feats, CapsuleState(U=u, Uhat=uhat, c=c, v=v)
