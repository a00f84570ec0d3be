"""Distilled vs from-scratch training of the planned student, several seeds."""

import argparse
import json

from srsqueeze.experiments import KDvsScratchConfig, kd_vs_scratch
from srsqueeze.models import ModelConfig

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--teacher", type=int, nargs=3, metavar=("NC", "NL", "NB"), default=[32, 2, 4])
    ap.add_argument("--teacher-iters", type=int, default=1000)
    ap.add_argument("--density", type=float, default=0.1)
    ap.add_argument("--iters", type=int, default=1000)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--out", help="write the results as JSON")
    a = ap.parse_args()
    cfg = KDvsScratchConfig(teacher=ModelConfig(*a.teacher), teacher_iters=a.teacher_iters,
                            density=a.density, iterations=a.iters)
    res = kd_vs_scratch(cfg, range(a.seeds))
    print(f"distillation >= scratch in {res['wins']}/{a.seeds} seeds, mean gain {res['mean_gain_db']:+.3f} dB")
    if a.out:
        with open(a.out, "w") as f:
            json.dump(res, f, indent=2)
