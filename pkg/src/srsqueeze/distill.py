"""Teacher-student distillation with a Laplacian-pyramid loss.

total = alpha * L_stu(student, gt) + L_dis(student, teacher)
L_dis = Lap(student, teacher) + Lap(HF(student), HF(teacher))

HF(x) = x - blur5(x), with blur5 the 5x5 binomial Gaussian. The pyramid
blurs and drops every second pixel per level; each band is the level minus
the upsampled next level, and the last level keeps the low-pass residue.
Band j is weighted by 2**j in the L1 sum.
"""

from __future__ import annotations

import json
import logging
import time
import uuid
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .losses import charbonnier, l1
from .models import SRModel, save_weights
from .optim import AdaMax
from .tensor import Tensor
from .training import TrainRun

log = logging.getLogger(__name__)

_BINOMIAL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def gaussian_kernel() -> np.ndarray:
    """The fixed 5x5 binomial kernel (entries sum to 1)."""
    return np.outer(_BINOMIAL, _BINOMIAL)


@dataclass
class KDConfig:
    alpha: float = 0.1
    pyramid_levels: int = 5
    epsilon: float = 1e-3
    student_loss: str = "charbonnier"
    lr: float = 2e-3
    betas: tuple[float, float] = (0.9, 0.99)
    iterations: int = 1000
    batch: int = 16
    patch: int = 32
    seed: int = 0
    log_every: int = 1

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")
        if self.student_loss not in ("charbonnier", "l1"):
            raise ValueError(f"unknown student_loss {self.student_loss!r}")
        self.betas = tuple(self.betas)


def _filter(img: Tensor, kernel: np.ndarray) -> Tensor:
    n, c, h, w = img.shape
    flat = T.reshape(img, (n * c, 1, h, w))
    k = Tensor(kernel.reshape(1, 1, 5, 5).astype(img.dtype))
    out = T.conv2d(T.pad_reflect(flat, 2), k)
    return T.reshape(out, (n, c, h, w))


def gaussian_blur_5x5(img) -> Tensor:
    """Depthwise 5x5 Gaussian blur with reflect padding."""
    img = T.tensor(img)
    if img.ndim != 4:
        raise ValueError(f"gaussian_blur_5x5 needs an NCHW tensor, got shape {img.shape}")
    if img.shape[2] < 1 or img.shape[3] < 1:
        raise ValueError(f"gaussian_blur_5x5: empty spatial dims {img.shape[2:]}")
    return _filter(img, gaussian_kernel())


def high_freq(img) -> Tensor:
    img = T.tensor(img)
    return img - gaussian_blur_5x5(img)


def pyr_down(x: Tensor) -> Tensor:
    return T.subsample2(gaussian_blur_5x5(x))


def pyr_up(x: Tensor, out_hw: tuple[int, int]) -> Tensor:
    return _filter(T.zero_insert2(x, out_hw), 4.0 * gaussian_kernel())


def max_levels(h: int, w: int) -> int:
    return int(np.floor(np.log2(min(h, w)))) + 1


def laplacian_pyramid(x, levels: int) -> list[Tensor]:
    """Band-pass levels 0..levels-2 followed by the low-pass residue."""
    x = T.tensor(x)
    h, w = x.shape[2:]
    if levels < 1:
        raise ValueError("levels must be >= 1")
    if min(h, w) < 2 ** (levels - 1):
        raise ValueError(f"image {h}x{w} too small for {levels} pyramid levels; "
                         f"at most {max_levels(h, w)} are feasible")
    bands = []
    cur = x
    for _ in range(levels - 1):
        down = pyr_down(cur)
        bands.append(cur - pyr_up(down, cur.shape[2:]))
        cur = down
    bands.append(cur)
    return bands


def laplacian_loss(a, b, levels: int = 5) -> Tensor:
    """sum_j 2**j * ||band_j(a) - band_j(b)||_1 / N, N = elements of a.

    Each band is a summed L1 norm, so coarse bands count in proportion to
    their size; one normaliser keeps the value on the scale of a mean L1.
    The pyramid is linear, so it is built once on a - b.
    """
    a, b = T.tensor(a), T.tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"laplacian_loss: shape mismatch {a.shape} vs {b.shape}")
    bands = laplacian_pyramid(a - b, levels)
    n = float(a.size)
    total = T.tsum(T.tabs(bands[0])) * (1.0 / n)
    for j, band in enumerate(bands[1:], start=1):
        total = total + T.tsum(T.tabs(band)) * float(2 ** j / n)
    return total


def _dis_parts(i_stu: Tensor, i_tea: Tensor, levels: int) -> tuple[Tensor, Tensor]:
    lap_image = laplacian_loss(i_stu, i_tea, levels)
    lap_hf = laplacian_loss(high_freq(i_stu), high_freq(i_tea), levels)
    return lap_image, lap_hf


def dis_loss(i_stu, i_tea, cfg: KDConfig | None = None) -> Tensor:
    cfg = cfg or KDConfig()
    lap_image, lap_hf = _dis_parts(T.tensor(i_stu), T.tensor(i_tea), cfg.pyramid_levels)
    return lap_image + lap_hf


def student_loss(i_stu, i_gt, cfg: KDConfig) -> Tensor:
    if cfg.student_loss == "l1":
        return l1(i_stu, i_gt)
    return charbonnier(i_stu, i_gt, cfg.epsilon)


def total_loss(i_stu, i_tea, i_gt, cfg: KDConfig | None = None) -> tuple[Tensor, dict[str, float]]:
    """Returns the loss tensor and its components as floats."""
    cfg = cfg or KDConfig()
    i_stu, i_tea, i_gt = T.tensor(i_stu), T.tensor(i_tea), T.tensor(i_gt)
    if not (i_stu.shape == i_tea.shape == i_gt.shape):
        raise ValueError(f"total_loss: shapes differ {i_stu.shape}, {i_tea.shape}, {i_gt.shape}")
    stu = student_loss(i_stu, i_gt, cfg)
    lap_image, lap_hf = _dis_parts(i_stu, i_tea, cfg.pyramid_levels)
    dis = lap_image + lap_hf
    total = stu * cfg.alpha + dis
    parts = {"total": total.item(), "student_term": stu.item(), "dis_term": dis.item(),
             "lap_image": lap_image.item(), "lap_hf": lap_hf.item()}
    return total, parts


def run_distillation(student: SRModel, teacher: SRModel, dataset, cfg: KDConfig,
                     log_path=None, checkpoint_path=None) -> TrainRun:
    """Train ``student`` in place against a frozen ``teacher``.

    ``dataset`` is a ``PatchSampler``. One JSON line per logged iteration is
    appended to ``log_path`` when given; the final student goes to
    ``checkpoint_path``.
    """
    if student.config.scale != teacher.config.scale:
        raise ValueError(f"teacher scale {teacher.config.scale} != student scale {student.config.scale}")
    if student.config.in_channels != teacher.config.in_channels:
        raise ValueError("teacher and student disagree on image channels")
    if len(dataset) == 0:
        raise ValueError("run_distillation: empty dataset")
    teacher.requires_grad_(False)
    student.requires_grad_(True)
    opt = AdaMax(student.parameters(), lr=cfg.lr, betas=cfg.betas)
    run = TrainRun(run_id=uuid.UUID(int=cfg.seed).hex, config=asdict(cfg))
    sink = open(log_path, "w") if log_path else None
    t0 = time.perf_counter()
    try:
        for it in range(cfg.iterations):
            lr_img, hr_img = dataset.batch(cfg.batch)
            with T.no_grad():
                i_tea = teacher(lr_img).data
            opt.zero_grad()
            loss, parts = total_loss(student(lr_img), i_tea, hr_img, cfg)
            loss.backward()
            opt.step()
            if cfg.log_every and (it % cfg.log_every == 0 or it == cfg.iterations - 1):
                row = {"iter": it, **parts}
                run.logs.append(row)
                if sink:
                    sink.write(json.dumps(row) + "\n")
    finally:
        if sink:
            sink.close()
        student.zero_grad()
    run.timings["distill_seconds"] = time.perf_counter() - t0
    if checkpoint_path:
        save_weights(student, checkpoint_path)
        run.checkpoints.append(str(Path(checkpoint_path)))
    return run
