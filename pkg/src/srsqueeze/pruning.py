"""Sparsity-inducing fine-tuning and density measurement.

The fine-tuning objective is Charbonnier fidelity plus ``lam * ||theta||_1``
over every trainable tensor. It is minimised with a two-phase orthant-based
proximal SGD: plain proximal steps (soft-thresholding) first, then steps
restricted to each weight's current orthant, where any sign flip is
projected to an exact zero. Density is measured over the deep module only.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from . import tensor as T
from .losses import charbonnier, l1_norm
from .models import SRModel

log = logging.getLogger(__name__)


@dataclass
class PruneConfig:
    epsilon: float = 1e-3
    lam: float = 1e-4
    lr: float = 0.1
    epochs: int = 20
    steps_per_epoch: int = 10
    switch_point: float = 0.5
    zero_tol: float = 0.0
    batch: int = 16
    patch: int = 48
    seed: int = 0
    log_every: int = 10

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not 0 < self.switch_point < 1:
            raise ValueError("switch_point must lie in (0, 1)")
        if self.zero_tol < 0:
            raise ValueError("zero_tol must be >= 0")

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch


class Phase(str, Enum):
    PROX_SG = "prox_sg"
    ORTHANT = "orthant"


@dataclass
class PruneReport:
    nonzero_deep: int
    total_deep: int
    density: float
    per_layer_density: dict[str, float] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> PruneReport:
        return cls(**d)


def prune_loss(sr, gt, params, cfg: PruneConfig) -> T.Tensor:
    """Charbonnier(sr, gt) + lam * sum |theta|."""
    fidelity = charbonnier(sr, gt, cfg.epsilon)
    return fidelity + l1_norm(params) * cfg.lam


def soft_threshold(x: np.ndarray, t: float) -> np.ndarray:
    return (np.sign(x) * np.maximum(np.abs(x) - t, 0)).astype(x.dtype)


def orthant_update(theta: np.ndarray, grad: np.ndarray, lr: float, lam: float) -> np.ndarray:
    """One step inside the orthant of ``theta``; sign flips and zeros end at 0."""
    sign = np.sign(theta)
    trial = theta - lr * (grad + lam * sign)
    return np.where(np.sign(trial) == sign, trial, 0).astype(theta.dtype)


def obprox_step(params, grads, cfg: PruneConfig, phase: Phase) -> None:
    """Update ``params`` in place from gradients of the smooth term only."""
    for p, g in zip(params, grads):
        if g is None:
            continue
        if phase is Phase.PROX_SG:
            p.data[...] = soft_threshold(p.data - cfg.lr * g, cfg.lr * cfg.lam)
        else:
            p.data[...] = orthant_update(p.data, g, cfg.lr, cfg.lam)


def measure_density(model: SRModel, zero_tol: float = 0.0) -> PruneReport:
    nonzero = total = 0
    per_layer = {}
    for name, p in model.named_parameters():
        if not name.startswith("deep."):
            continue
        nz = int(np.count_nonzero(np.abs(p.data) > zero_tol))
        per_layer[name] = nz / p.size
        nonzero += nz
        total += p.size
    return PruneReport(nonzero, total, nonzero / total, per_layer)


def run_pruning(model: SRModel, dataset, cfg: PruneConfig) -> PruneReport:
    """Fine-tune ``model`` in place and report the deep-module density.

    ``dataset`` is a ``PatchSampler``; its scale must match the model.
    """
    if dataset is None or len(dataset) == 0:
        raise ValueError("run_pruning: empty dataset")
    if getattr(dataset, "scale", model.config.scale) != model.config.scale:
        raise ValueError(f"dataset scale {dataset.scale} != model scale {model.config.scale}")
    params = model.parameters()
    for p in params:
        p.requires_grad = True
    total = cfg.total_steps
    switch = int(math.floor(cfg.switch_point * total))

    probe_lr, probe_hr = dataset.batch(cfg.batch)
    with T.no_grad():
        before = charbonnier(model(probe_lr), probe_hr, cfg.epsilon).item()

    history = []
    for step in range(total):
        lr_img, hr_img = dataset.batch(cfg.batch)
        model.zero_grad()
        loss = charbonnier(model(lr_img), hr_img, cfg.epsilon)
        loss.backward()
        phase = Phase.PROX_SG if step < switch else Phase.ORTHANT
        obprox_step(params, [p.grad for p in params], cfg, phase)
        if cfg.log_every and (step % cfg.log_every == 0 or step == total - 1):
            l1 = float(sum(np.abs(p.data).sum(dtype=np.float64) for p in params))
            history.append({"step": step, "phase": phase.value, "charbonnier": loss.item(), "l1": l1})
            log.debug("prune step %d %s loss=%.6f l1=%.3f", step, phase.value, loss.item(), l1)
    model.zero_grad()

    with T.no_grad():
        after = charbonnier(model(probe_lr), probe_hr, cfg.epsilon).item()
    report = measure_density(model, cfg.zero_tol)
    report.metadata = {
        "config": asdict(cfg),
        "steps": total,
        "switch_step": switch,
        "charbonnier_before": before,
        "charbonnier_after": after,
        "history": history,
        "defaults_note": "batch, patch, lr and steps_per_epoch are local choices",
    }
    return report
