"""Write a folder of procedurally generated HR PNGs for the toy workflow."""

import argparse

from srsqueeze.data import write_synthetic_dataset

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="data/toy_hr")
    ap.add_argument("--n", type=int, default=24)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    paths = write_synthetic_dataset(a.out, a.n, a.size, a.seed)
    print(f"wrote {len(paths)} images to {a.out}")
