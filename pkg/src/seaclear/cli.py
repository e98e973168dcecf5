"""Command-line interface: synthesize data, degrade, enhance, train, evaluate,
gradient-check, and run the ablation matrix.

Batch-oriented: every run writes its outputs under --out together with a
manifest (seed, config echo, versions) so results are reproducible.  Exit
codes: 0 success, 2 bad arguments, 3 I/O failure, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import platform
import sys

import numpy as np

from . import __version__, data, losses, model, trainer
from .tensor import Rng, Tensor, grad_check, no_grad

EXIT_OK = 0
EXIT_ARGS = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

GRADCHECK_TOL = 1e-3


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as f:
            return json.load(f)
    except OSError as e:
        raise CliError(f"cannot read config {path}: {e}", EXIT_IO)
    except json.JSONDecodeError as e:
        raise CliError(f"config {path} is not valid JSON: {e}", EXIT_ARGS)


def _train_config(args, cfg_file):
    """Preset < config file < explicit flags."""
    preset = trainer.toy_train_config if args.preset == "toy" else trainer.paper_train_config
    overrides = dict(cfg_file.get("train", {}))
    if "model" in cfg_file:
        overrides["model"] = model.ModelConfig(**cfg_file["model"])
    if "loss" in cfg_file:
        overrides["loss"] = losses.LossConfig(**cfg_file["loss"])
    if args.seed is not None:
        overrides["seed"] = args.seed
    try:
        return preset(**overrides)
    except (TypeError, ValueError) as e:
        raise CliError(f"bad training config: {e}", EXIT_ARGS)


def _synth_config(args, cfg_file):
    overrides = dict(cfg_file.get("synth", {}))
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "count", None) is not None:
        overrides["count"] = args.count
    try:
        if args.preset == "toy":
            return data.toy_synthetic_config(**overrides)
        return data.SyntheticConfig(**overrides)
    except (TypeError, ValueError) as e:
        raise CliError(f"bad synthetic config: {e}", EXIT_ARGS)


def _write_manifest(out_dir, args, config=None, extra=None):
    manifest = {
        "command": args.cmd,
        "argv": sys.argv[1:],
        "seed": args.seed,
        "preset": getattr(args, "preset", None),
        "config": config,
        "versions": {
            "package": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True, default=str)
    return path


def _ensure_out_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise CliError(f"cannot create output directory {path}: {e}", EXIT_IO)
    return path


def _load_dataset(root):
    try:
        return data.load_paired_dataset(root)
    except (OSError, data.PpmError) as e:
        raise CliError(f"cannot load dataset {root}: {e}", EXIT_IO)


def _read_image(path):
    try:
        return data.read_image(path)
    except (OSError, data.PpmError) as e:
        raise CliError(f"cannot read image {path}: {e}", EXIT_IO)


def _load_ckpt(path):
    try:
        return trainer.load_checkpoint(path)
    except OSError as e:
        raise CliError(f"cannot read checkpoint {path}: {e}", EXIT_IO)
    except trainer.CheckpointError as e:
        raise CliError(f"bad checkpoint {path}: {e}", EXIT_IO)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args):
    cfg = _synth_config(args, _load_config(args.config))
    out = _ensure_out_dir(args.out)
    samples = data.make_synthetic_dataset(cfg)
    data.save_paired_dataset(out, samples)
    _write_manifest(out, args, config=cfg.to_dict(), extra={"count": len(samples)})
    print(f"wrote {len(samples)} paired samples to {out}")
    return EXIT_OK


def cmd_degrade(args):
    cfg = _synth_config(args, _load_config(args.config))
    clear = _read_image(args.infile)
    rng = Rng(cfg.seed)
    sample = data.make_synthetic_pair(clear, cfg, rng)
    out_dir = _ensure_out_dir(os.path.dirname(os.path.abspath(args.outfile)))
    data.write_image(args.outfile, sample.degraded)
    np.savez(args.outfile + ".physics.npz", t=sample.t, b=sample.b)
    _write_manifest(out_dir, args, config=cfg.to_dict(),
                    extra={"input": args.infile, "output": args.outfile})
    print(f"degraded {args.infile} -> {args.outfile}")
    return EXIT_OK


def cmd_enhance(args):
    ck = _load_ckpt(args.ckpt)
    img = _read_image(args.infile)
    with no_grad():
        out = model.forward(Tensor(img), ck["params"], ck["model_cfg"])
    enhanced = np.clip(out.enhanced.data, 0.0, 1.0)
    if not np.isfinite(enhanced).all():
        raise CliError("non-finite values in enhanced output", EXIT_NUMERIC)
    out_dir = _ensure_out_dir(os.path.dirname(os.path.abspath(args.outfile)))
    data.write_image(args.outfile, enhanced)
    _write_manifest(out_dir, args, config=ck["model_cfg"].to_dict(),
                    extra={"input": args.infile, "output": args.outfile})
    print(f"enhanced {args.infile} -> {args.outfile}")
    return EXIT_OK


def cmd_train(args):
    cfg = _train_config(args, _load_config(args.config))
    out = _ensure_out_dir(args.out)
    samples = _load_dataset(args.data)
    log_path = os.path.join(out, "loss.csv")
    try:
        with open(log_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step", "rec", "lap", "cycle", "transmission", "total"])
            params, history = trainer.train(
                cfg, samples, out_dir=out, resume=args.resume,
                log=lambda step, r: w.writerow([step] + r.as_row()))
    except trainer.NumericError as e:
        raise CliError(str(e), EXIT_NUMERIC)
    _write_manifest(out, args, config=cfg.to_dict(),
                    extra={"data": args.data, "steps_run": len(history),
                           "final_loss": history[-1].total if history else None})
    print(f"trained {len(history)} steps; final total loss "
          f"{history[-1].total:.4f}; checkpoint {os.path.join(out, 'final.ckpt')}")
    return EXIT_OK


def cmd_eval(args):
    out = _ensure_out_dir(args.out)
    if args.verify_pairs:
        bad = data.verify_pairs(args.data)
        _write_manifest(out, args, extra={"data": args.data, "mismatches": bad})
        if bad:
            print(f"pair verification FAILED for {len(bad)} samples: {', '.join(bad)}")
            return EXIT_IO
        print("all pairs verified bit-exact")
        return EXIT_OK
    ck = _load_ckpt(args.ckpt)
    samples = _load_dataset(args.data)
    report = trainer.evaluate(ck["params"], ck["model_cfg"], samples)
    rows = {
        "psnr_enhanced": report["psnr_enhanced"],
        "ssim_enhanced": report["ssim_enhanced"],
        "psnr_degraded": report["psnr_degraded"],
        "mean_total_loss": report["loss"].total,
    }
    with open(os.path.join(out, "metrics.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(list(rows))
        w.writerow([f"{v:.6f}" for v in rows.values()])
    _write_manifest(out, args, config=ck["model_cfg"].to_dict(),
                    extra={"data": args.data, "metrics": rows})
    for k, v in rows.items():
        print(f"{k}: {v:.4f}")
    return EXIT_OK


def cmd_gradcheck(args):
    seed = args.seed if args.seed is not None else 0
    cfg = trainer.toy_train_config(seed=seed) if args.preset == "toy" \
        else trainer.paper_train_config(seed=seed)
    sample = data.make_synthetic_dataset(
        data.toy_synthetic_config(seed=seed, count=1,
                                  size=(cfg.model.image_size, cfg.model.image_size)))[0]
    params = trainer.init_params(cfg.model, seed)
    names = sorted(params)

    # The transmission target is defined with a stop-gradient; freeze it at its
    # unperturbed value so finite differences probe the function the backward
    # pass actually differentiates.
    deg_t, clear_t = Tensor(sample.degraded), Tensor(sample.clear)
    with no_grad():
        out0 = model.forward(deg_t, params, cfg.model)
    from . import physics
    target0 = physics.expected_transmission(deg_t, clear_t, out0.b_hat, cfg.loss.eps)

    def f(*tensors):
        p = dict(zip(names, tensors))
        out = model.forward(deg_t, p, cfg.model)
        loss, _ = losses.total_loss(out, clear_t, deg_t, cfg.loss,
                                    transmission_target=target0)
        return loss

    # `samples` is a total budget spread across parameter tensors; h is small
    # and kink-skipping on because the L1 terms are piecewise linear.
    per_input = max(1, -(-args.samples // len(names)))
    err = grad_check(f, [params[n] for n in names], h=1e-5,
                     samples=per_input, rng=Rng(seed), skip_kinks=True, floor=1e-6)
    print(f"max relative gradient error over >= {args.samples} coordinates: {err:.3e} "
          f"(tolerance {GRADCHECK_TOL:.0e})")
    if not np.isfinite(err) or err > GRADCHECK_TOL:
        return EXIT_NUMERIC
    return EXIT_OK


def _ablate_variants(axis):
    """Config deltas per ablation row: latent fusion, loss terms, enhancer Psi."""
    if axis == "fusion":
        return [(mode, {"model": {"fusion": mode}}) for mode in model.FUSION_MODES]
    if axis == "psi":
        return [(mode, {"model": {"psi_mode": mode}}) for mode in model.PSI_MODES]
    if axis == "loss":
        return [
            ("full", {}),
            ("no_physics", {"loss": {"eta": 0.0}}),
            ("no_lap", {"loss": {"use_lap": False}}),
            ("rec_only", {"loss": {"use_lap": False, "eta": 0.0}}),
            ("levels2", {"loss": {"levels": 2}}),
            ("levels4", {"loss": {"levels": 4}}),
            ("uniform_weights", {"loss": {"levels": 3, "weights": (1.0, 1.0, 1.0)}}),
        ]
    raise CliError(f"unknown ablation axis {axis!r}", EXIT_ARGS)


def cmd_ablate(args):
    if args.preset != "toy":
        raise CliError("ablation runs only at toy scale (--preset toy)", EXIT_ARGS)
    out = _ensure_out_dir(args.out)
    seed = args.seed if args.seed is not None else 0
    if args.data:
        train_set = _load_dataset(args.data)
    else:
        train_set = data.make_synthetic_dataset(data.toy_synthetic_config(seed=seed))
    held_out = data.make_synthetic_dataset(
        data.toy_synthetic_config(seed=seed + 1000, count=16))

    rows = []
    for name, delta in _ablate_variants(args.axis):
        overrides = {"seed": seed, "steps": args.steps}
        if "model" in delta:
            overrides["model"] = model.toy_model_config(**delta["model"])
        if "loss" in delta:
            base = trainer.toy_train_config().loss.to_dict()
            base.update(delta["loss"])
            if "levels" in delta["loss"] and "weights" not in delta["loss"]:
                base["weights"] = None  # re-derive defaults for the new depth
            overrides["loss"] = losses.LossConfig(**base)
        cfg = trainer.toy_train_config(**overrides)
        try:
            params, history = trainer.train(cfg, train_set)
        except trainer.NumericError as e:
            raise CliError(f"variant {name}: {e}", EXIT_NUMERIC)
        report = trainer.evaluate(params, cfg.model, held_out, cfg.loss)
        rows.append([name, model.param_count(params),
                     f"{report['psnr_enhanced']:.4f}", f"{report['ssim_enhanced']:.4f}",
                     f"{report['psnr_degraded']:.4f}", f"{history[-1].total:.6f}"])
        print(f"{args.axis}/{name}: psnr {report['psnr_enhanced']:.2f} "
              f"ssim {report['ssim_enhanced']:.4f}")

    csv_path = os.path.join(out, f"ablate_{args.axis}.csv")
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["variant", "param_count", "psnr_enhanced", "ssim_enhanced",
                    "psnr_degraded", "final_total_loss"])
        w.writerows(rows)
    _write_manifest(out, args, extra={"axis": args.axis, "csv": csv_path,
                                      "variants": [r[0] for r in rows]})
    print(f"wrote {csv_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="seaclear",
        description="Physics-guided underwater image enhancement toolkit.")
    sub = parser.add_subparsers(dest="cmd", required=True)

    def common(p, out_dir=True):
        p.add_argument("--config", help="JSON config file", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--preset", choices=("toy", "paper"), default="toy")
        if out_dir:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("synth", help="generate a synthetic paired dataset")
    common(p)
    p.add_argument("--count", type=int, default=None)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("degrade", help="apply the degradation model to an image")
    common(p, out_dir=False)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", dest="outfile", required=True, help="output image path")
    p.set_defaults(fn=cmd_degrade)

    p = sub.add_parser("enhance", help="enhance an image with a trained checkpoint")
    common(p, out_dir=False)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", dest="outfile", required=True, help="output image path")
    p.set_defaults(fn=cmd_enhance)

    p = sub.add_parser("train", help="train on a paired dataset directory")
    common(p)
    p.add_argument("--data", required=True, help="dataset root (clear/ + degraded/)")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a paired dataset")
    common(p)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--verify-pairs", action="store_true",
                   help="only check dataset pairing bit-exactness")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model gradient")
    common(p, out_dir=False)
    p.add_argument("--samples", type=int, default=120,
                   help="parameter coordinates to probe")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("ablate", help="run one ablation axis end to end")
    common(p)
    p.add_argument("--axis", choices=("fusion", "loss", "psi"), required=True)
    p.add_argument("--data", default=None, help="optional dataset root; synthesized if omitted")
    p.add_argument("--steps", type=int, default=200)
    p.set_defaults(fn=cmd_ablate)

    return parser


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if e.code is not None else EXIT_ARGS
    if args.cmd == "eval" and not args.verify_pairs and not args.ckpt:
        print("error: eval requires --ckpt (or --verify-pairs)", file=sys.stderr)
        return EXIT_ARGS
    try:
        return args.fn(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except trainer.NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
