"""Coverage of fresh treatment draws by the bootstrap extrapolation ranges.

Linear Gaussian treatment model T = 1 + X1 - X2/2 + N(0, 1).  Both residual
pairings are reported: pooled rows (default) and the row's own residual.

    python scripts/coverage_experiment.py --n 1000 --B 100
"""
import argparse

import numpy as np

from mde.resample import extrapolation_range, treatment_ensemble


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--B", type=int, default=100)
    ap.add_argument("--alpha", type=float, default=0.10)
    ap.add_argument("--seed", type=int, default=8)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    X = rng.normal(size=(args.n, 2))
    f = 1 + X[:, 0] - 0.5 * X[:, 1]
    t = f + rng.normal(size=args.n)
    ens = treatment_ensemble(t, X, args.B, 0)
    fresh = f[None, :] + rng.normal(size=(20, args.n))
    for pooled in (True, False):
        lo, hi = extrapolation_range(ens, args.alpha, pool_rows=pooled)
        cov = np.mean((fresh >= lo) & (fresh <= hi))
        print(f"pool_rows={pooled!s:5s} coverage {cov:.3f} mean width {np.mean(hi - lo):.3f}")
    print(f"base fit rmse vs truth {np.sqrt(np.mean((ens.base.fitted - f) ** 2)):.3f}")


if __name__ == "__main__":
    main()
