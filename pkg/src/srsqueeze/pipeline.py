"""End-to-end workflow: pretrain -> prune -> plan -> distill -> eval.

Every stage writes its artifacts into ``out_dir`` so stages can be resumed or
run as separate processes:

    teacher.srwt          pretrained (or supplied) teacher
    pruned.srwt           teacher after sparsity fine-tuning
    prune_report.json     density report
    plan.json             compression plan
    student.srwt          distilled compact model
    distill_log.jsonl     per-iteration loss components
    eval.json             held-out metrics
    report.json           consolidated, deterministic summary
    state.json            completed stages + config fingerprint (resume)
    timings.json          wall-clock seconds per stage (kept out of report.json)
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .data import PatchSampler, load_dir, synthetic_images
from .distill import KDConfig, run_distillation
from .models import ModelConfig, build, estimate_flops, exact_param_count, load_weights, save_weights
from .planner import CompressionPlan, adjust_peripherals, plan, verify_plan
from .pruning import PruneConfig, PruneReport, run_pruning
from .training import evaluate, evaluate_bicubic, pretrain

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)

STAGES = ("pretrain", "prune", "plan", "distill", "eval")
FLOPS_HW = (720, 1280)


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class DataSection:
    dir: str | None = None          # HR PNG folder; synthetic images when unset
    synthetic: int = 12
    size: int = 64
    held_out: int = 2
    prune_images: int = 10
    kd_images: int = 20
    patch: int = 32


@dataclass
class PretrainSection:
    iters: int = 500
    batch: int = 8
    lr: float = 5e-3
    weights: str | None = None      # skip training and load this teacher


@dataclass
class PlanSection:
    mode: str = "search"
    density: float | None = None    # override the measured density


@dataclass
class EvalSection:
    ssim: bool = True


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    model: ModelConfig = field(default_factory=lambda: ModelConfig(16, 2, 2))
    data: DataSection = field(default_factory=DataSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    prune: PruneConfig = field(default_factory=lambda: PruneConfig(batch=8, patch=32))
    plan: PlanSection = field(default_factory=PlanSection)
    distill: KDConfig = field(default_factory=lambda: KDConfig(batch=8, patch=32))
    eval: EvalSection = field(default_factory=EvalSection)

    _sections = {"model": ModelConfig, "data": DataSection, "pretrain": PretrainSection,
                 "prune": PruneConfig, "plan": PlanSection, "distill": KDConfig, "eval": EvalSection}

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown run config keys: {sorted(unknown)}")
        kw = {}
        for name, value in d.items():
            section = cls._sections.get(name)
            if section is None:
                kw[name] = value
                continue
            allowed = {f.name for f in fields(section)}
            bad = set(value) - allowed
            if bad:
                raise ValueError(f"unknown keys in [{name}]: {sorted(bad)}")
            kw[name] = section(**value)
        return cls(**kw)

    @classmethod
    def from_toml(cls, path) -> RunConfig:
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except OSError as e:
            raise OSError(f"cannot read run config {path}: {e}") from e
        cfg = cls.from_dict(raw)
        # relative paths are taken from the config file's folder
        if not Path(cfg.out_dir).is_absolute():
            cfg.out_dir = os.path.normpath(path.parent / cfg.out_dir)
        if cfg.data.dir and not Path(cfg.data.dir).is_absolute():
            cfg.data.dir = os.path.normpath(path.parent / cfg.data.dir)
        if cfg.pretrain.weights and not Path(cfg.pretrain.weights).is_absolute():
            cfg.pretrain.weights = os.path.normpath(path.parent / cfg.pretrain.weights)
        return cfg

    def to_dict(self) -> dict:
        return {"seed": self.seed, "out_dir": self.out_dir,
                **{name: asdict(getattr(self, name)) for name in self._sections}}

    def fingerprint(self) -> str:
        d = self.to_dict()
        d.pop("out_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


# -- helpers -----------------------------------------------------------------------------

def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_json(path: Path):
    return json.loads(path.read_text())


def _load_images(cfg: RunConfig):
    if cfg.data.dir:
        images = load_dir(cfg.data.dir)
        if not images:
            raise ValueError(f"no PNG images in {cfg.data.dir}")
    else:
        images = synthetic_images(cfg.data.synthetic, cfg.data.size, seed=cfg.seed)
    if len(images) <= cfg.data.held_out:
        raise ValueError(f"{len(images)} images leave nothing to train on after holding out {cfg.data.held_out}")
    pool = images[:len(images) - cfg.data.held_out]
    held = images[len(images) - cfg.data.held_out:]
    return pool[:cfg.data.prune_images], pool[:cfg.data.kd_images], held


class _State:
    def __init__(self, out: Path, fingerprint: str, resume: bool):
        self.path = out / "state.json"
        self.fingerprint = fingerprint
        self.completed: list[str] = []
        if resume and self.path.exists():
            saved = _read_json(self.path)
            if saved.get("fingerprint") == fingerprint:
                self.completed = list(saved.get("completed", []))
            else:
                log.warning("run config changed since the last run; starting over")

    def done(self, stage: str) -> bool:
        return stage in self.completed

    def mark(self, stage: str) -> None:
        if stage not in self.completed:
            self.completed.append(stage)
        _write_json(self.path, {"fingerprint": self.fingerprint, "completed": self.completed})


# -- stages ------------------------------------------------------------------------------

def _stage_pretrain(cfg, out, kd_set):
    if cfg.pretrain.weights:
        teacher = load_weights(cfg.pretrain.weights)
        if teacher.config != cfg.model:
            raise ValueError(f"teacher weights have config {teacher.config}, run config says {cfg.model}")
    else:
        sampler = PatchSampler(kd_set, patch=cfg.data.patch, scale=cfg.model.scale, seed=cfg.seed + 1)
        teacher = pretrain(cfg.model, sampler, cfg.pretrain.iters, seed=cfg.seed,
                           batch=cfg.pretrain.batch, lr=cfg.pretrain.lr)
    save_weights(teacher, out / "teacher.srwt")


def _stage_prune(cfg, out, prune_set):
    model = load_weights(out / "teacher.srwt")
    sampler = PatchSampler(prune_set, patch=cfg.prune.patch, scale=cfg.model.scale, seed=cfg.seed + 2)
    report = run_pruning(model, sampler, cfg.prune)
    save_weights(model, out / "pruned.srwt")
    _write_json(out / "prune_report.json", report.to_dict())


def _stage_plan(cfg, out):
    report = PruneReport.from_dict(_read_json(out / "prune_report.json"))
    d = cfg.plan.density if cfg.plan.density is not None else report.density
    if d <= 0:
        raise ValueError("pruning removed every deep parameter (d = 0); lower lambda")
    p = plan(cfg.model, d, cfg.plan.mode)
    _write_json(out / "plan.json", p.to_dict())


def _stage_distill(cfg, out, kd_set):
    p = CompressionPlan.from_dict(_read_json(out / "plan.json"))
    teacher = load_weights(out / "teacher.srwt")
    student = build(adjust_peripherals(cfg.model, p.target), seed=cfg.seed + 3)
    sampler = PatchSampler(kd_set, patch=cfg.distill.patch, scale=cfg.model.scale, seed=cfg.seed + 4)
    run_distillation(student, teacher, sampler, cfg.distill,
                     log_path=out / "distill_log.jsonl", checkpoint_path=out / "student.srwt")


def _stage_eval(cfg, out, held):
    names = [f"held_out_{i}" for i in range(len(held))]
    result = {"images": names}
    for key, fname in (("teacher", "teacher.srwt"), ("pruned", "pruned.srwt"), ("student", "student.srwt")):
        result[key] = evaluate(load_weights(out / fname), held, names, with_ssim=cfg.eval.ssim).to_dict()
    result["bicubic"] = evaluate_bicubic(held, cfg.model.scale, names, with_ssim=cfg.eval.ssim).to_dict()
    _write_json(out / "eval.json", result)


def _portable(cfg: RunConfig) -> dict:
    # keep the report identical wherever the run lives on disk
    d = cfg.to_dict()
    d["out_dir"] = "."
    for section, key in (("data", "dir"), ("pretrain", "weights")):
        if d[section][key]:
            d[section][key] = Path(d[section][key]).name
    return d


def _report(cfg: RunConfig, out: Path) -> dict:
    teacher = load_weights(out / "teacher.srwt")
    student = load_weights(out / "student.srwt")
    prune_rep = _read_json(out / "prune_report.json")
    p = CompressionPlan.from_dict(_read_json(out / "plan.json"))
    logs = [json.loads(line) for line in (out / "distill_log.jsonl").read_text().splitlines() if line]
    ev = _read_json(out / "eval.json")
    tc, sc = exact_param_count(teacher), exact_param_count(student)
    h, w = FLOPS_HW
    meta = prune_rep.get("metadata", {})
    return {
        "config": _portable(cfg),
        "pretrain": {
            "model": teacher.config.to_dict(),
            "iters": 0 if cfg.pretrain.weights else cfg.pretrain.iters,
            "checkpoint": "teacher.srwt",
        },
        "prune": {
            "density": prune_rep["density"],
            "nonzero_deep": prune_rep["nonzero_deep"],
            "total_deep": prune_rep["total_deep"],
            "charbonnier_before": meta.get("charbonnier_before"),
            "charbonnier_after": meta.get("charbonnier_after"),
            "checkpoint": "pruned.srwt",
            "report": "prune_report.json",
        },
        "plan": p.to_dict() | {"verification": verify_plan(p).to_dict(), "file": "plan.json"},
        "distill": {
            "iterations": cfg.distill.iterations,
            "first": logs[0] if logs else None,
            "last": logs[-1] if logs else None,
            "checkpoint": "student.srwt",
            "log": "distill_log.jsonl",
        },
        "eval": ev,
        "summary": {
            "d": p.d,
            "teacher": teacher.config.triple,
            "student": student.config.triple,
            "teacher_params": tc.total,
            "student_params": sc.total,
            "compression_ratio": sc.total / tc.total,
            "deep_ratio": sc.deep / tc.deep,
            "teacher_flops": estimate_flops(teacher.config, h, w),
            "student_flops": estimate_flops(student.config, h, w),
            "flops_at": f"{w}x{h}",
            "psnr": {k: ev[k]["mean_psnr"] for k in ("bicubic", "teacher", "pruned", "student")},
            "ssim": {k: ev[k]["mean_ssim"] for k in ("bicubic", "teacher", "pruned", "student")},
        },
    }


def run_workflow(cfg: RunConfig, resume: bool = True) -> dict:
    """Run every stage not already completed and return the consolidated report."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state = _State(out, cfg.fingerprint(), resume)
    timings_path = out / "timings.json"
    timings = _read_json(timings_path) if state.completed and timings_path.exists() else {}

    prune_set, kd_set, held = _load_images(cfg)
    steps = {
        "pretrain": lambda: _stage_pretrain(cfg, out, kd_set),
        "prune": lambda: _stage_prune(cfg, out, prune_set),
        "plan": lambda: _stage_plan(cfg, out),
        "distill": lambda: _stage_distill(cfg, out, kd_set),
        "eval": lambda: _stage_eval(cfg, out, held),
    }
    for stage in STAGES:
        if state.done(stage):
            log.info("stage %s: already done, skipping", stage)
            continue
        log.info("stage %s: running", stage)
        t0 = time.perf_counter()
        try:
            steps[stage]()
        except Exception as e:
            raise StageError(stage, e) from e
        timings[stage] = time.perf_counter() - t0
        _write_json(timings_path, timings)
        state.mark(stage)

    report = _report(cfg, out)
    _write_json(out / "report.json", report)
    return report
