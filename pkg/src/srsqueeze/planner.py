"""Compact-architecture planning from a measured density.

Given a source (n_c, n_l, n_b) and density d, the block count and the
per-block layer term (n_l + 1) are each scaled by d**(1/6), and the channel
count is then solved from the deep-module parameter balance

    n_b' (n_l' + 1) n_c'^2 / (n_b (n_l + 1) n_c^2) = d

so that n_c' / n_c = sqrt(d * n_b (n_l + 1) / (n_b' (n_l' + 1))), using the
already-rounded n_b', n_l'. Channels are floored to a multiple of 8.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum

from .models import ModelConfig, config_param_count

CHANNEL_MULTIPLE = 8


class RoundingMode(str, Enum):
    NEAREST = "nearest"
    FLOOR = "floor"
    CEIL = "ceil"
    SEARCH = "search"
    PAPER_COMPAT = "paper_compat"


# (n_c, n_l, n_b, d) -> published compact (n_c, n_l, n_b)
KNOWN_TARGETS: dict[tuple[int, int, int, float], tuple[int, int, int]] = {
    (60, 6, 4, 0.089): (24, 4, 3),
    (64, 2, 16, 0.03): (16, 1, 8),
}


@dataclass
class CompressionPlan:
    source: ModelConfig
    d: float
    rounding_mode: RoundingMode
    target: ModelConfig
    achieved_ratio: float
    achieved_exact_ratio: float
    clamped: bool = False
    override: bool = False
    exact_scaling: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["source"] = self.source.to_dict()
        out["target"] = self.target.to_dict()
        out["rounding_mode"] = self.rounding_mode.value
        return out

    @classmethod
    def from_dict(cls, d: dict) -> CompressionPlan:
        d = dict(d)
        d["source"] = ModelConfig.from_dict(d["source"])
        d["target"] = ModelConfig.from_dict(d["target"])
        d["rounding_mode"] = RoundingMode(d["rounding_mode"])
        return cls(**d)


@dataclass
class VerificationReport:
    d: float
    approx_ratio: float
    exact_ratio: float
    approx_deviation: float
    exact_deviation: float

    def to_dict(self) -> dict:
        return asdict(self)


def _check_density(d: float) -> None:
    if not (isinstance(d, (int, float)) and 0 < d <= 1):
        raise ValueError(f"density must lie in (0, 1], got {d!r}")


def exact_scaling(source: ModelConfig, d: float) -> tuple[float, float, float]:
    """Real-valued (n_b', n_l', n_c') before any rounding."""
    _check_density(d)
    f = d ** (1.0 / 6.0)
    nb = source.n_b * f
    nl1 = (source.n_l + 1) * f
    nc = source.n_c * math.sqrt(d * source.n_b * (source.n_l + 1) / (nb * nl1))
    return nb, nl1 - 1, nc


def balance_ratio(source: ModelConfig, n_b: float, n_l: float, n_c: float) -> float:
    """n_b (n_l + 1) n_c^2 relative to the source; the approximate P_DF ratio."""
    return (n_b * (n_l + 1) * n_c ** 2) / (source.n_b * (source.n_l + 1) * source.n_c ** 2)


def solve_channels(source: ModelConfig, d: float, n_b: int, n_l: int) -> tuple[int, bool]:
    """Channel count for already-rounded (n_b, n_l), floored to a multiple of 8.

    Returns (n_c, clamped); clamped means the value was raised to 8.
    """
    real = source.n_c * math.sqrt(d * source.n_b * (source.n_l + 1) / (n_b * (n_l + 1)))
    # guard against real values like 23.999999999 from d**(1/6) round-trips
    snapped = math.floor(real / CHANNEL_MULTIPLE + 1e-9) * CHANNEL_MULTIPLE
    if snapped < CHANNEL_MULTIPLE:
        return CHANNEL_MULTIPLE, True
    return snapped, False


def _round(x: float, how: str) -> int:
    if how == "floor":
        return math.floor(x + 1e-9)
    if how == "ceil":
        return math.ceil(x - 1e-9)
    return math.floor(x + 0.5)


def _make(source: ModelConfig, d: float, n_b: int, n_l: int, mode: RoundingMode) -> CompressionPlan:
    n_b, n_l = max(n_b, 1), max(n_l, 1)
    n_c, clamped = solve_channels(source, d, n_b, n_l)
    target = replace(source, n_c=n_c, n_l=n_l, n_b=n_b)
    nb_r, nl_r, nc_r = exact_scaling(source, d)
    return CompressionPlan(
        source=source, d=float(d), rounding_mode=mode, target=target,
        achieved_ratio=balance_ratio(source, n_b, n_l, n_c),
        achieved_exact_ratio=config_param_count(target).deep / config_param_count(source).deep,
        clamped=clamped,
        exact_scaling={"n_b": nb_r, "n_l": nl_r, "n_c": nc_r},
    )


def _lookup(source: ModelConfig, d: float, table) -> tuple[int, int, int] | None:
    for (nc, nl, nb, dd), hit in table.items():
        if (nc, nl, nb) == source.triple and abs(dd - d) < 5e-4:
            return hit
    return None


def plan(source: ModelConfig, d: float, mode: RoundingMode | str = RoundingMode.SEARCH,
         overrides: dict | None = None) -> CompressionPlan:
    """Derive a compact config for ``source`` at density ``d``.

    ``search`` tries floor/ceil of both scaled block and layer terms and keeps
    the plan whose balance ratio is closest to ``d``. ``paper_compat`` does the
    same, then applies ``KNOWN_TARGETS`` (plus ``overrides``) when the source and
    density match an entry.
    """
    _check_density(d)
    mode = RoundingMode(mode)
    if d == 1:
        # nothing to remove: keep the source even when n_c is not a multiple of 8
        return CompressionPlan(source=source, d=1.0, rounding_mode=mode, target=source,
                               achieved_ratio=1.0, achieved_exact_ratio=1.0,
                               exact_scaling={"n_b": float(source.n_b), "n_l": float(source.n_l),
                                              "n_c": float(source.n_c)})
    nb_r, nl_r, _ = exact_scaling(source, d)
    nl1_r = nl_r + 1

    if mode in (RoundingMode.NEAREST, RoundingMode.FLOOR, RoundingMode.CEIL):
        return _make(source, d, _round(nb_r, mode.value), _round(nl1_r, mode.value) - 1, mode)

    candidates = []
    for nb, nl1 in itertools.product({_round(nb_r, "floor"), _round(nb_r, "ceil")},
                                     {_round(nl1_r, "floor"), _round(nl1_r, "ceil")}):
        p = _make(source, d, nb, nl1 - 1, mode)
        # ties: prefer the larger model, then lexicographic for determinism
        candidates.append((abs(p.achieved_ratio - d), -p.achieved_ratio, p.target.triple, p))
    best = min(candidates, key=lambda c: c[:3])[3]

    if mode is RoundingMode.PAPER_COMPAT:
        table = {**KNOWN_TARGETS, **(overrides or {})}
        hit = _lookup(source, d, table)
        if hit is not None:
            n_c, n_l, n_b = hit
            target = replace(source, n_c=n_c, n_l=n_l, n_b=n_b)
            best = replace(
                best, target=target, override=True, clamped=False,
                achieved_ratio=balance_ratio(source, n_b, n_l, n_c),
                achieved_exact_ratio=config_param_count(target).deep / config_param_count(source).deep,
            )
    return best


def verify_plan(p: CompressionPlan) -> VerificationReport:
    """Recompute both ratios of a plan independently of how it was built."""
    s, t = p.source, p.target
    approx = (t.n_b * (t.n_l + 1) * t.n_c ** 2) / (s.n_b * (s.n_l + 1) * s.n_c ** 2)
    exact = config_param_count(t).deep / config_param_count(s).deep
    return VerificationReport(p.d, approx, exact, abs(approx - p.d), abs(exact - p.d))


def adjust_peripherals(source: ModelConfig, target: ModelConfig) -> ModelConfig:
    """Compact config with shallow/reconstruction layers sized to the new n_c.

    The peripheral layers are derived from n_c, so this keeps the target's
    (n_c, n_l, n_b) and restores the source's kernel, scale and in_channels.
    """
    return replace(target, kernel=source.kernel, scale=source.scale, in_channels=source.in_channels)
