"""Pixel losses shared by pretraining, pruning and distillation."""

from __future__ import annotations

from . import tensor as T
from .tensor import Tensor


def _check(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def charbonnier(sr, gt, eps: float = 1e-3) -> Tensor:
    """mean(sqrt((sr - gt)^2 + eps^2))."""
    sr, gt = T.tensor(sr), T.tensor(gt)
    _check(sr, gt, "charbonnier")
    return T.mean(T.sqrt(T.square(sr - gt) + eps * eps))


def l1(a, b) -> Tensor:
    """mean(|a - b|)."""
    a, b = T.tensor(a), T.tensor(b)
    _check(a, b, "l1")
    return T.mean(T.tabs(a - b))


def l1_norm(params) -> Tensor:
    """Sum of absolute values over every tensor in ``params``."""
    params = list(params)
    if not params:
        raise ValueError("l1_norm of an empty parameter set")
    total = T.tsum(T.tabs(params[0]))
    for p in params[1:]:
        total = total + T.tsum(T.tabs(p))
    return total
