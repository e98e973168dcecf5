"""AdamW training loop, evaluation, and binary checkpointing."""
from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass, field, asdict

import numpy as np

from . import data as data_mod
from . import losses as losses_mod
from . import metrics as metrics_mod
from . import model as model_mod
from .tensor import Rng, Tensor, no_grad

CKPT_MAGIC = b"PICEVAE1"
CKPT_VERSION = 1


class NumericError(RuntimeError):
    """Non-finite loss or gradient during training."""


class CheckpointError(ValueError):
    """Unreadable or incompatible checkpoint file."""


@dataclass
class TrainConfig:
    lr: float = 4.5e-6
    batch: int = 32
    steps: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    adam_eps: float = 1e-8
    seed: int = 0
    ckpt_interval: int = 0          # 0 disables periodic checkpoints
    crop_size: int = 0              # 0 disables crop/flip augmentation
    loss: losses_mod.LossConfig = field(default_factory=losses_mod.LossConfig)
    model: model_mod.ModelConfig = field(default_factory=model_mod.ModelConfig)

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = losses_mod.LossConfig(**self.loss)
        if isinstance(self.model, dict):
            self.model = model_mod.ModelConfig(**self.model)
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")

    def to_dict(self):
        return asdict(self)


def toy_train_config(**overrides):
    """Fast desk-scale preset: small model, higher lr, strong physics weight."""
    defaults = dict(
        lr=1e-3,
        batch=4,
        steps=200,
        seed=0,
        model=model_mod.toy_model_config(),
        loss=losses_mod.LossConfig(eta=1.0),
    )
    defaults.update(overrides)
    return TrainConfig(**defaults)


def paper_train_config(**overrides):
    """Published schedule (full scale; not exercised by the test suite)."""
    defaults = dict(lr=4.5e-6, batch=32, steps=500 * 100, crop_size=256,
                    model=model_mod.ModelConfig(), loss=losses_mod.LossConfig())
    defaults.update(overrides)
    return TrainConfig(**defaults)


def init_params(cfg, seed):
    """Deterministic parameter initialization for a model config."""
    return model_mod.init_params(cfg, Rng(seed).spawn(0))


# ---------------------------------------------------------------------------
# AdamW
# ---------------------------------------------------------------------------

@dataclass
class OptimState:
    m: dict
    v: dict
    step: int = 0

    @staticmethod
    def fresh(params):
        return OptimState(
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
            step=0)


def adamw_step(params, grads, state, cfg):
    """One decoupled-weight-decay Adam update, in place."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.data.shape} for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
        p.data = (p.data - cfg.lr * (update + cfg.weight_decay * p.data)).astype(p.data.dtype)
    return params, state


# ---------------------------------------------------------------------------
# training / evaluation
# ---------------------------------------------------------------------------

def _batch_loss(params, batch, cfg):
    """Mean total loss over a batch; returns (tensor, mean report)."""
    total = None
    rows = np.zeros(5)
    for s in batch:
        out = model_mod.forward(Tensor(s.degraded), params, cfg.model)
        t, report = losses_mod.total_loss(out, Tensor(s.clear), Tensor(s.degraded), cfg.loss)
        total = t if total is None else total + t
        rows += np.array(report.as_row())
    rows /= len(batch)
    return total * (1.0 / len(batch)), losses_mod.LossReport(*map(float, rows))


def _augment(batch, cfg, rng):
    if not cfg.crop_size:
        return batch
    out = []
    for s in batch:
        # crop clear/degraded/fields jointly so the pairing stays consistent
        stackd = np.concatenate([s.clear, s.degraded, s.t[None], s.b[None]], axis=0)
        c = data_mod.random_crop_flip(stackd, (cfg.crop_size, cfg.crop_size), rng)
        out.append(data_mod.PairedSample(clear=c[:3], degraded=c[3:6], t=c[6], b=c[7]))
    return out


def train(cfg, samples, out_dir=None, resume=None, log=None):
    """Run the optimization loop; returns (params, loss history).

    Fully determined by (cfg.seed, cfg, samples).  `resume` is a checkpoint
    path; the resumed run reproduces the uninterrupted one bit-exactly.
    """
    if not samples:
        raise ValueError("empty dataset")
    if resume is not None:
        ck = load_checkpoint(resume)
        params = ck["params"]
        state = ck["optim"]
        start_step = ck["step"]
        history = ck.get("history", [])
    else:
        params = init_params(cfg.model, cfg.seed)
        state = OptimState.fresh(params)
        start_step = 0
        history = []

    base = Rng(cfg.seed)
    n = len(samples)
    per_epoch = n // cfg.batch
    if per_epoch == 0:
        raise ValueError(f"batch size {cfg.batch} exceeds dataset size {n}")

    step = start_step
    while step < cfg.steps:
        epoch = step // per_epoch
        order = base.spawn(1, epoch).permutation(n)
        for bi in range(per_epoch):
            if step >= cfg.steps:
                break
            if step // per_epoch != epoch:
                break
            if bi != step % per_epoch:
                continue  # skip batches already consumed before a resume
            batch = [samples[i] for i in order[bi * cfg.batch:(bi + 1) * cfg.batch]]
            # per-batch augmentation stream keeps resumed runs aligned
            batch = _augment(batch, cfg, base.spawn(2, epoch, bi))
            for p in params.values():
                p.zero_grad()
            loss, report = _batch_loss(params, batch, cfg)
            if not np.isfinite(report.total):
                raise NumericError(f"non-finite loss at step {step}: {report}")
            loss.backward()
            grads = {k: p.grad for k, p in params.items()}
            adamw_step(params, grads, state, cfg)
            history.append(report)
            step += 1
            if log:
                log(step, report)
            if out_dir and cfg.ckpt_interval and step % cfg.ckpt_interval == 0:
                save_checkpoint(os.path.join(out_dir, f"step{step:06d}.ckpt"),
                                params, cfg.model, optim=state, step=step, history=history)
    if out_dir:
        save_checkpoint(os.path.join(out_dir, "final.ckpt"),
                        params, cfg.model, optim=state, step=step, history=history)
    return params, history


def evaluate(params, model_cfg, samples, loss_cfg=None):
    """Mean PSNR/SSIM of enhanced-vs-clear (and the degraded no-op baseline)
    plus mean per-term losses over a paired dataset."""
    if not samples:
        raise ValueError("empty dataset")
    loss_cfg = loss_cfg or losses_mod.LossConfig()
    psnr_e = []
    ssim_e = []
    psnr_d = []
    rows = np.zeros(5)
    with no_grad():
        for s in samples:
            out = model_mod.forward(Tensor(s.degraded), params, model_cfg)
            enhanced = np.clip(out.enhanced.data, 0.0, 1.0)
            psnr_e.append(metrics_mod.psnr(enhanced, s.clear))
            ssim_e.append(metrics_mod.ssim(enhanced, s.clear))
            psnr_d.append(metrics_mod.psnr(s.degraded, s.clear))
            _, report = losses_mod.total_loss(out, Tensor(s.clear), Tensor(s.degraded), loss_cfg)
            rows += np.array(report.as_row())
    rows /= len(samples)
    return {
        "psnr_enhanced": float(np.mean(psnr_e)),
        "ssim_enhanced": float(np.mean(ssim_e)),
        "psnr_degraded": float(np.mean(psnr_d)),
        "loss": losses_mod.LossReport(*rows),
    }


# ---------------------------------------------------------------------------
# checkpoint serialization
# ---------------------------------------------------------------------------

def _pack_tensor(name, arr):
    nb = name.encode("utf-8")
    parts = [struct.pack("<I", len(nb)), nb, struct.pack("<I", arr.ndim)]
    parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(path, params, model_cfg, optim=None, step=0, history=None, rng_state=None):
    header = {
        "model": model_cfg.to_dict(),
        "step": int(step),
        "rng": rng_state,
        "param_names": list(params.keys()),
        "has_optim": optim is not None,
        "history": [r.as_row() for r in (history or [])],
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    body = [CKPT_MAGIC, struct.pack("<I", CKPT_VERSION), struct.pack("<I", len(hb)), hb]
    for name, p in params.items():
        body.append(_pack_tensor(name, p.data))
    if optim is not None:
        body.append(struct.pack("<I", optim.step))
        for name in params:
            body.append(_pack_tensor("optim.m." + name, optim.m[name]))
            body.append(_pack_tensor("optim.v." + name, optim.v[name]))
    blob = b"".join(body)
    with open(path, "wb") as f:
        f.write(blob)
        f.write(struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF))


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.blob):
            raise CheckpointError("truncated checkpoint")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def tensor(self):
        name = self.take(self.u32()).decode("utf-8")
        rank = self.u32()
        shape = struct.unpack(f"<{rank}I", self.take(4 * rank))
        count = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(self.take(4 * count), dtype="<f4").reshape(shape).copy()
        return name, arr


def load_checkpoint(path):
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(CKPT_MAGIC) + 8:
        raise CheckpointError("file too short to be a checkpoint")
    if blob[:len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise CheckpointError(f"bad magic {blob[:len(CKPT_MAGIC)]!r}")
    body, crc = blob[:-4], struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError("CRC mismatch (corrupt or truncated file)")
    r = _Reader(body)
    r.take(len(CKPT_MAGIC))
    version = r.u32()
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(r.take(r.u32()).decode("utf-8"))
    model_cfg = model_mod.ModelConfig(**header["model"])
    params = {}
    for expected in header["param_names"]:
        name, arr = r.tensor()
        if name != expected:
            raise CheckpointError(f"parameter order mismatch: {name} != {expected}")
        params[name] = Tensor(arr, requires_grad=True)
    optim = None
    if header["has_optim"]:
        opt_step = r.u32()
        m, v = {}, {}
        for name in header["param_names"]:
            nm, arr = r.tensor()
            if nm != "optim.m." + name:
                raise CheckpointError(f"unexpected moment tensor {nm}")
            m[name] = arr
            nm, arr = r.tensor()
            if nm != "optim.v." + name:
                raise CheckpointError(f"unexpected moment tensor {nm}")
            v[name] = arr
        optim = OptimState(m=m, v=v, step=opt_step)
    history = [losses_mod.LossReport(*row) for row in header.get("history", [])]
    return {
        "params": params,
        "model_cfg": model_cfg,
        "optim": optim,
        "step": header["step"],
        "rng": header.get("rng"),
        "history": history,
    }
