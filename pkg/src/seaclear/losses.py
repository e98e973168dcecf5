"""Training objective: reconstruction, Laplacian pyramid, cycle-consistency,
and transmission supervision terms.

All L1 terms are means over elements (a `reduction` flag switches to sums),
which keeps the physics weight meaningful across resolutions.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

from . import physics
from .tensor import Tensor, abs_, avg_pool2, reduce_mean, reduce_sum, sub, upsample_nearest2


@dataclass
class LossConfig:
    levels: int = 3
    weights: tuple = None          # defaults to 1/2^k for k = 0..levels-1
    eta: float = 1e-4
    eps: float = 1e-6
    reduction: str = "mean"
    use_rec: bool = True
    use_lap: bool = True
    use_cycle: bool = True
    use_transmission: bool = True

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("pyramid needs at least one level")
        if self.weights is None:
            self.weights = tuple(0.5 ** k for k in range(self.levels))
        else:
            self.weights = tuple(self.weights)
        if len(self.weights) != self.levels:
            raise ValueError("one weight per pyramid level required")
        if min(self.weights) <= 0:
            raise ValueError("pyramid weights must be positive")
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if self.reduction not in ("mean", "sum"):
            raise ValueError("reduction must be 'mean' or 'sum'")

    def to_dict(self):
        return asdict(self)


@dataclass
class LossReport:
    rec: float
    lap: float
    cycle: float
    transmission: float
    total: float

    def as_row(self):
        return [self.rec, self.lap, self.cycle, self.transmission, self.total]


def _l1(a, b, reduction="mean"):
    d = abs_(sub(a, b))
    return reduce_mean(d) if reduction == "mean" else reduce_sum(d)


def _check_divisible(img, levels):
    step = 2 ** (levels - 1)
    if img.shape[-1] % step or img.shape[-2] % step:
        raise ValueError(
            f"spatial extents {img.shape[-2:]} not divisible by 2^{levels - 1}")


def gaussian_pyramid(img, levels):
    """[G_0..G_{L-1}] by recursive 2x2 average pooling; G_0 is the input."""
    _check_divisible(img, levels)
    pyr = [img]
    for _ in range(levels - 1):
        pyr.append(avg_pool2(pyr[-1]))
    return pyr


def laplacian_pyramid(img, levels):
    """Band-pass residuals between Gaussian levels; coarsest level kept as-is."""
    g = gaussian_pyramid(img, levels)
    lap = [sub(g[k], upsample_nearest2(g[k + 1])) for k in range(levels - 1)]
    lap.append(g[-1])
    return lap


def reconstruct_from_laplacian(lap):
    """Telescoping inverse of laplacian_pyramid (exact)."""
    out = lap[-1]
    for band in reversed(lap[:-1]):
        out = upsample_nearest2(out) + band
    return out


def loss_rec(clear, enhanced, reduction="mean"):
    return _l1(clear, enhanced, reduction)


def loss_lap(clear, enhanced, cfg):
    lc = laplacian_pyramid(clear, cfg.levels)
    le = laplacian_pyramid(enhanced, cfg.levels)
    total = None
    for w, a, b in zip(cfg.weights, le, lc):
        term = _l1(a, b, cfg.reduction) * w
        total = term if total is None else total + term
    return total


def loss_cycle(deg, clear, t_hat, b_hat, reduction="mean"):
    """L1 between the observed degraded image and its physics recomposition
    from the ground-truth clear image and the estimated maps."""
    return _l1(deg, physics.degrade(clear, t_hat, b_hat), reduction)


def loss_transmission(deg, clear, t_hat, b_hat, eps=1e-6, reduction="mean", target=None):
    """L1 between the estimated transmission and the model-implied target.

    The target is computed detached: it supervises t_hat without letting the
    network bend the target through b_hat.  Pass a precomputed `target` to
    freeze it explicitly (finite-difference checks must hold it constant,
    since the analytic gradient treats it as one).
    """
    if target is None:
        target = physics.expected_transmission(
            deg.detach(), clear.detach(), b_hat.detach(), eps)
    return _l1(target, t_hat, reduction)


def total_loss(outputs, clear, deg, cfg, transmission_target=None):
    """Combine the four terms; returns (scalar tensor, per-term report)."""
    zero = Tensor(0.0)
    rec = loss_rec(clear, outputs.enhanced, cfg.reduction) if cfg.use_rec else zero
    lap = loss_lap(clear, outputs.enhanced, cfg) if cfg.use_lap else zero
    cyc = (loss_cycle(deg, clear, outputs.t_hat, outputs.b_hat, cfg.reduction)
           if cfg.use_cycle else zero)
    trans = (loss_transmission(deg, clear, outputs.t_hat, outputs.b_hat, cfg.eps,
                               cfg.reduction, target=transmission_target)
             if cfg.use_transmission else zero)
    total = rec + lap + (cyc + trans) * cfg.eta
    report = LossReport(rec=rec.item(), lap=lap.item(), cycle=cyc.item(),
                        transmission=trans.item(), total=total.item())
    return total, report
