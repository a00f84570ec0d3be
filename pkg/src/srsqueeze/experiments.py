"""Small reproducible experiments shared by scripts/ and the acceptance suite."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .data import PatchSampler, synthetic_images
from .distill import KDConfig, run_distillation
from .models import ModelConfig, build
from .planner import adjust_peripherals, plan
from .training import evaluate, fit, pretrain


@dataclass
class KDvsScratchConfig:
    teacher: ModelConfig = field(default_factory=lambda: ModelConfig(32, 2, 4))
    teacher_iters: int = 1000
    teacher_batch: int = 16
    teacher_lr: float = 5e-3
    density: float = 0.1
    iterations: int = 1000
    batch: int = 8
    patch: int = 32
    lr: float = 2e-3
    n_images: int = 12
    held_out: int = 2
    image_size: int = 64
    data_seed: int = 0
    kd: KDConfig = field(default_factory=KDConfig)


@dataclass
class SeedResult:
    seed: int
    scratch_psnr: float
    kd_psnr: float

    @property
    def kd_wins(self) -> bool:
        return self.kd_psnr >= self.scratch_psnr


def kd_vs_scratch(cfg: KDvsScratchConfig, seeds=range(5), teacher=None, log=print) -> dict:
    """Train the planned student twice per seed, from scratch and with distillation.

    Both runs of a seed share the student initialisation and the patch stream, so
    the only difference is the loss. Scores are mean held-out Y-PSNR.
    """
    images = synthetic_images(cfg.n_images, cfg.image_size, cfg.data_seed)
    train, held = images[:-cfg.held_out], images[-cfg.held_out:]
    if teacher is None:
        teacher = pretrain(cfg.teacher, PatchSampler(train, patch=cfg.patch, seed=1), cfg.teacher_iters,
                           batch=cfg.teacher_batch, lr=cfg.teacher_lr)
    teacher_psnr = evaluate(teacher, held, with_ssim=False).mean_psnr
    student_cfg = adjust_peripherals(teacher.config, plan(teacher.config, cfg.density).target)
    log(f"teacher {teacher.config.triple}: {teacher_psnr:.3f} dB; student {student_cfg.triple}")

    kd = KDConfig(**{**asdict(cfg.kd), "iterations": cfg.iterations, "batch": cfg.batch,
                     "patch": cfg.patch, "lr": cfg.lr, "log_every": 0})
    results = []
    for seed in seeds:
        scratch = build(student_cfg, seed=100 + seed)
        student = scratch.copy()
        fit(scratch, PatchSampler(train, patch=cfg.patch, seed=200 + seed), cfg.iterations,
            batch=cfg.batch, lr=cfg.lr, eps=kd.epsilon)
        run_distillation(student, teacher, PatchSampler(train, patch=cfg.patch, seed=200 + seed), kd)
        r = SeedResult(seed, evaluate(scratch, held, with_ssim=False).mean_psnr,
                       evaluate(student, held, with_ssim=False).mean_psnr)
        log(f"seed {seed}: scratch {r.scratch_psnr:.3f} dB, distilled {r.kd_psnr:.3f} dB")
        results.append(r)
    return {
        "teacher": list(teacher.config.triple),
        "teacher_psnr": teacher_psnr,
        "student": list(student_cfg.triple),
        "seeds": [asdict(r) | {"kd_wins": r.kd_wins} for r in results],
        "wins": sum(r.kd_wins for r in results),
        "mean_gain_db": float(np.mean([r.kd_psnr - r.scratch_psnr for r in results])),
    }
