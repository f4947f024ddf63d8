"""Simulation benchmark: long CSV of metrics plus a per-cell summary.

    python scripts/run_benchmark.py --n 2000 --reps 20 --out bench.csv
"""
import argparse
import csv
from collections import defaultdict

import numpy as np

from mde.simlab import OUTCOME_SETTINGS, run_benchmark


def summarise(rows):
    cells = defaultdict(list)
    for r in rows:
        cells[(r["setting"], int(r["n"]), int(r["p"]), r["method"])].append(
            (float(r["rmse"]), float(r["rmse_nabla"]), float(r["bias_nabla"]), float(r["runtime"])))
    print(f"{'setting':14s} {'n':>6s} {'p':>3s} {'method':6s} {'rmse':>7s} {'rmse_d':>7s} {'bias_d':>7s} {'sec':>6s}")
    for (s, n, p, m), v in sorted(cells.items()):
        a = np.nanmean(np.array(v), axis=0)
        print(f"{s:14s} {n:6d} {p:3d} {m:6s} {a[0]:7.3f} {a[1]:7.3f} {a[2]:7.3f} {a[3]:6.2f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--settings", default=",".join(OUTCOME_SETTINGS))
    ap.add_argument("--n", default="2000")
    ap.add_argument("--p", default="10")
    ap.add_argument("--methods", default="mde,ols,null")
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="bench.csv")
    args = ap.parse_args()
    grid = [(s, int(n), int(p)) for s in args.settings.split(",") for n in args.n.split(",")
            for p in args.p.split(",")]
    run_benchmark(grid, tuple(args.methods.split(",")), args.reps, args.seed, args.out)
    with open(args.out, newline="") as fh:
        summarise(list(csv.DictReader(fh)))


if __name__ == "__main__":
    main()
