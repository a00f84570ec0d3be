"""Plain supervised training, inference and evaluation helpers."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from . import tensor as T
from .data import bicubic_resize, from_nchw, mod_crop, psnr, ssim, to_nchw
from .losses import charbonnier
from .models import ModelConfig, SRModel, build
from .optim import AdaMax


@dataclass
class TrainRun:
    run_id: str
    config: dict
    logs: list[dict] = field(default_factory=list)
    checkpoints: list[str] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def fit(model: SRModel, dataset, iters: int, batch: int = 16, lr: float = 2e-3,
        betas: tuple[float, float] = (0.9, 0.99), eps: float = 1e-3, log_every: int = 0) -> list[dict]:
    """Charbonnier training with AdaMax; returns the logged losses."""
    if iters and len(dataset) == 0:
        raise ValueError("fit: empty dataset")
    model.requires_grad_(True)
    opt = AdaMax(model.parameters(), lr=lr, betas=betas)
    logs = []
    for it in range(iters):
        lr_img, hr_img = dataset.batch(batch)
        opt.zero_grad()
        loss = charbonnier(model(lr_img), hr_img, eps)
        loss.backward()
        opt.step()
        if log_every and (it % log_every == 0 or it == iters - 1):
            logs.append({"iter": it, "loss": loss.item()})
    model.zero_grad()
    return logs


def pretrain(config: ModelConfig, dataset, iters: int, seed: int = 0, **fit_kw) -> SRModel:
    """Build a model from ``seed`` and fit it on ``dataset`` for ``iters`` steps."""
    model = build(config, seed)
    if iters:
        if dataset is None or len(dataset) == 0:
            raise ValueError("pretrain: empty dataset")
        fit(model, dataset, iters, **fit_kw)
    return model


def super_resolve(model: SRModel, lr_img) -> np.ndarray:
    """HWC low-res image in, clipped HWC SR image out."""
    with T.no_grad():
        out = model(to_nchw(lr_img)).data
    return np.clip(from_nchw(out), 0.0, 1.0)


@dataclass
class EvalResult:
    psnr: list[float]
    ssim: list[float]
    mean_psnr: float
    mean_ssim: float
    border: int
    names: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _summarise(ps, ss, border, names) -> EvalResult:
    return EvalResult([float(p) for p in ps], [float(s) for s in ss],
                      float(np.mean(ps)), float(np.mean(ss)), border, list(names))


def degrade(hr, scale: int) -> tuple[np.ndarray, np.ndarray]:
    """Mod-crop an HR image and return (LR, HR)."""
    hr = mod_crop(hr, scale)
    return bicubic_resize(hr, Fraction(1, scale)), hr


def evaluate(model: SRModel, hr_images, names=None, with_ssim: bool = True) -> EvalResult:
    """Y-channel PSNR/SSIM of ``model`` on bicubic-degraded copies of ``hr_images``."""
    scale = model.config.scale
    ps, ss = [], []
    for hr in hr_images:
        lr, hr = degrade(hr, scale)
        sr = super_resolve(model, lr)
        ps.append(psnr(sr, hr, border=scale))
        ss.append(ssim(sr, hr, border=scale) if with_ssim else float("nan"))
    return _summarise(ps, ss, scale, names or [])


def evaluate_bicubic(hr_images, scale: int, names=None, with_ssim: bool = True) -> EvalResult:
    """Same protocol with bicubic upscaling in place of the model."""
    ps, ss = [], []
    for hr in hr_images:
        lr, hr = degrade(hr, scale)
        up = np.clip(bicubic_resize(lr, scale), 0.0, 1.0)
        ps.append(psnr(up, hr, border=scale))
        ss.append(ssim(up, hr, border=scale) if with_ssim else float("nan"))
    return _summarise(ps, ss, scale, names or [])


def timed(fn, *a, **kw):
    t0 = time.perf_counter()
    out = fn(*a, **kw)
    return out, time.perf_counter() - t0
