"""Median bagging against the point estimate under heavy-tailed noise.

    python scripts/bagging_experiment.py --runs 20 --B 21 --df 2
"""
import argparse

import numpy as np

from mde.core import local_effect, stack
from mde.resample import bagged_effect, wild_bootstrap


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--runs", type=int, default=20)
    ap.add_argument("--B", type=int, default=21)
    ap.add_argument("--n", type=int, default=300)
    ap.add_argument("--df", type=float, default=2.0, help="Student-t degrees of freedom of the noise")
    args = ap.parse_args()
    wins = 0
    for seed in range(args.runs):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(args.n, 2))
        t = rng.normal(size=args.n) + 0.5 * X[:, 0]
        y = np.sin(2 * t) * (1 + 0.5 * X[:, 1]) + X[:, 0] + 0.5 * rng.standard_t(args.df, size=args.n)
        d = 2 * np.cos(2 * t) * (1 + 0.5 * X[:, 1])
        ens = wild_bootstrap(y, stack(t, X), args.B, seed)
        a = np.sqrt(np.mean((local_effect(ens.base, ens.V) - d) ** 2))
        b = np.sqrt(np.mean((bagged_effect(ens) - d) ** 2))
        wins += b <= a
        print(f"{seed:3d} point {a:7.3f} bagged {b:7.3f}")
    print(f"bagged <= point in {wins}/{args.runs}")


if __name__ == "__main__":
    main()
