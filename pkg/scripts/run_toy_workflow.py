"""Pretrain -> prune -> plan -> distill -> evaluate on synthetic data (a few minutes on CPU)."""

import argparse
import json
from pathlib import Path

from srsqueeze.pipeline import RunConfig, run_workflow

ROOT = Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(ROOT / "configs" / "toy.toml"))
    ap.add_argument("--out-dir")
    ap.add_argument("--no-resume", action="store_true")
    a = ap.parse_args()
    cfg = RunConfig.from_toml(a.config)
    if a.out_dir:
        cfg.out_dir = a.out_dir
    report = run_workflow(cfg, resume=not a.no_resume)
    print(json.dumps(report["summary"], indent=2))
