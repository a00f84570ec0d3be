"""Command-line entry point: ``srsqueeze <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .data import PatchSampler, list_images, load_dir, load_png, write_synthetic_dataset
from .distill import KDConfig, run_distillation
from .models import (ModelConfig, approx_param_count, build, config_param_count, estimate_flops,
                     load_weights, save_weights)
from .pipeline import RunConfig, StageError, run_workflow
from .planner import CompressionPlan, RoundingMode, adjust_peripherals, plan
from .pruning import PruneConfig, run_pruning
from .training import evaluate, evaluate_bicubic, pretrain


def _model_args(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--nc", type=int, required=required, help="feature channels")
    p.add_argument("--nl", type=int, required=required, help="conv layers per residual block")
    p.add_argument("--nb", type=int, required=required, help="residual blocks")
    p.add_argument("--kernel", type=int, default=3)
    p.add_argument("--scale", type=int, default=2)
    p.add_argument("--in-channels", type=int, default=3)


def _config(a) -> ModelConfig:
    return ModelConfig(a.nc, a.nl, a.nb, a.kernel, a.scale, a.in_channels)


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _sampler(directory, patch, scale, seed) -> PatchSampler:
    images = load_dir(directory)
    if not images:
        raise ValueError(f"no PNG images in {directory}")
    return PatchSampler(images, patch=patch, scale=scale, seed=seed)


# -- commands ----------------------------------------------------------------------------

def cmd_pretrain(a) -> int:
    cfg = _config(a)
    data = _sampler(a.data, a.patch, cfg.scale, a.seed + 1)
    model = pretrain(cfg, data, a.iters, seed=a.seed, batch=a.batch, lr=a.lr)
    save_weights(model, a.out)
    print(f"wrote {a.out}")
    return 0


def cmd_prune(a) -> int:
    model = load_weights(a.model)
    cfg = PruneConfig(lam=a.lam, epochs=a.epochs, steps_per_epoch=a.steps_per_epoch, lr=a.lr,
                      batch=a.batch, patch=a.patch, seed=a.seed, zero_tol=a.zero_tol)
    report = run_pruning(model, _sampler(a.data, a.patch, model.config.scale, a.seed), cfg)
    save_weights(model, a.out)
    _write_json(a.report, report.to_dict())
    print(f"density d = {report.density:.6f} ({report.nonzero_deep}/{report.total_deep} nonzero)")
    return 0


def cmd_plan(a) -> int:
    if a.density is None:
        if not a.prune_report:
            raise ValueError("give --density or --prune-report")
        a.density = json.loads(Path(a.prune_report).read_text())["density"]
    p = plan(_config(a), a.density, a.mode)
    _write_json(a.out, p.to_dict())
    t = p.target
    flag = " (channels clamped to 8)" if p.clamped else ""
    print(f"target n_c={t.n_c} n_l={t.n_l} n_b={t.n_b}, ratio {p.achieved_ratio:.4f} vs d={p.d}{flag}")
    return 0


def _student_config(path, source: ModelConfig) -> ModelConfig:
    raw = json.loads(Path(path).read_text())
    target = CompressionPlan.from_dict(raw).target if "target" in raw else ModelConfig.from_dict(raw)
    return adjust_peripherals(source, target)


def cmd_distill(a) -> int:
    teacher = load_weights(a.teacher)
    student = build(_student_config(a.student_config, teacher.config), seed=a.seed)
    cfg = KDConfig(alpha=a.alpha, iterations=a.iters, batch=a.batch, patch=a.patch, lr=a.lr,
                   pyramid_levels=a.levels, student_loss=a.student_loss, seed=a.seed)
    run = run_distillation(student, teacher, _sampler(a.data, a.patch, teacher.config.scale, a.seed + 1),
                           cfg, log_path=a.log, checkpoint_path=a.out)
    last = run.logs[-1] if run.logs else {}
    print(f"wrote {a.out}; final total loss {last.get('total', float('nan')):.6f}")
    return 0


def cmd_eval(a) -> int:
    paths = list_images(a.hr)
    if not paths:
        raise ValueError(f"no PNG images in {a.hr}")
    images, names = [load_png(p) for p in paths], [p.name for p in paths]
    if a.model:
        model = load_weights(a.model)
        if model.config.scale != a.scale:
            raise ValueError(f"model is x{model.config.scale} but --scale {a.scale} was given")
        res = evaluate(model, images, names)
    else:
        res = evaluate_bicubic(images, a.scale, names)
    if a.out:
        _write_json(a.out, res.to_dict())
    print(f"PSNR {res.mean_psnr:.3f} dB  SSIM {res.mean_ssim:.4f}  ({len(images)} images, Y channel)")
    return 0


def cmd_count(a) -> int:
    cfg = _config(a)
    pc = config_param_count(cfg)
    macs = estimate_flops(cfg, a.height, a.width)
    print(f"config           n_c={cfg.n_c} n_l={cfg.n_l} n_b={cfg.n_b} k={cfg.kernel} x{cfg.scale}")
    print(f"params (exact)   {pc.total:,}  [shallow {pc.shallow:,}, deep {pc.deep:,}, recon {pc.recon:,}]")
    print(f"params (approx)  {approx_param_count(cfg):,.0f}  (deep module, s^2 N_b (N_l+1) N_c^2)")
    print(f"FLOPs @{a.width}x{a.height}  {macs / 1e9:.2f} G (multiply-adds)  /  {2 * macs / 1e9:.2f} G (2 per MAC)")
    return 0


def cmd_run(a) -> int:
    cfg = RunConfig.from_toml(a.config)
    if a.out_dir:
        cfg.out_dir = a.out_dir
    report = run_workflow(cfg, resume=not a.no_resume)
    s = report["summary"]
    print(f"d = {s['d']:.4f}; teacher {tuple(s['teacher'])} -> student {tuple(s['student'])}; "
          f"params {s['teacher_params']:,} -> {s['student_params']:,} (ratio {s['compression_ratio']:.4f})")
    print("PSNR " + ", ".join(f"{k} {v:.2f}" for k, v in s["psnr"].items()))
    print(f"report: {Path(cfg.out_dir) / 'report.json'}")
    return 0


def cmd_make_toy_data(a) -> int:
    paths = write_synthetic_dataset(a.out, a.n, a.size, a.seed)
    print(f"wrote {len(paths)} images to {a.out}")
    return 0


# -- parser ------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srsqueeze", description="Prune, plan and distill compact SR models.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="train a teacher from scratch")
    _model_args(p)
    p.add_argument("--data", required=True, help="folder of HR PNGs")
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--patch", type=int, default=32)
    p.add_argument("--lr", type=float, default=5e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("prune", help="L1 sparsity fine-tuning and density measurement")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=1e-4)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--steps-per-epoch", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--patch", type=int, default=32)
    p.add_argument("--zero-tol", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(fn=cmd_prune)

    p = sub.add_parser("plan", help="compact architecture for a density")
    _model_args(p)
    p.add_argument("--density", type=float)
    p.add_argument("--prune-report", help="read the density from a prune report instead")
    p.add_argument("--mode", choices=[m.value for m in RoundingMode], default="search")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_plan)

    p = sub.add_parser("distill", help="train a compact student against a teacher")
    p.add_argument("--teacher", required=True)
    p.add_argument("--student-config", required=True, help="plan.json or a model config JSON")
    p.add_argument("--data", required=True)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--patch", type=int, default=32)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--levels", type=int, default=5)
    p.add_argument("--student-loss", choices=["charbonnier", "l1"], default="charbonnier")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.set_defaults(fn=cmd_distill)

    p = sub.add_parser("eval", help="Y-channel PSNR/SSIM on a folder of HR images")
    p.add_argument("--model", help="omit for the bicubic baseline")
    p.add_argument("--hr", required=True)
    p.add_argument("--scale", type=int, default=2)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("count", help="parameter and FLOP counts for a config")
    _model_args(p)
    p.add_argument("--height", type=int, default=720, help="output (HR) height")
    p.add_argument("--width", type=int, default=1280, help="output (HR) width")
    p.set_defaults(fn=cmd_count)

    p = sub.add_parser("run", help="full workflow from a TOML run config")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--no-resume", action="store_true", help="ignore completed stages and start over")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("make-toy-data", help="write procedurally generated PNGs")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=12)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_make_toy_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
