"""Acceptance criteria.  Each criterion prints one PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``.
"""
import os
import sys
import time

import numpy as np
import pytest

from mde import lassoplus as lp
from mde import resample
from mde.basis import HINGE, candidate_count
from mde.core import fit_mde, fit_surface, local_effect, predict, stack
from mde.iv import NONCOMPLIER, COMPLIER, fit_iv
from mde.mediation import curvature_bound, fit_mediation, product_rule_check
from mde.screen import brute_force_topk, column_chunks, screen
from mde.simlab import SimSpec, generate, ols, run_benchmark

RESULTS = {}


def report(k, ok, detail, seconds):
    line = f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail} [{seconds:.1f}s]"
    RESULTS[k] = line
    print(line, file=sys.__stdout__, flush=True)
    return ok


def timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


# ---------------------------------------------------------------- criteria

def criterion_1():
    def run():
        t0 = time.perf_counter()
        a, b = candidate_count(10), candidate_count(20)
        return a, b, time.perf_counter() - t0
    (a, b, dt), s = timed(run)
    ok = a == 1_684_349 and b == 6_710_669 and dt < 1e-3
    return report(1, ok, f"candidate_count(10)={a:,} (want 1,684,349), candidate_count(20)={b:,} "
                         f"(want 6,710,669), {dt * 1e3:.3f} ms", s)


def criterion_2():
    def run():
        same = 0
        for seed in range(50):
            rng = np.random.default_rng(seed)
            n, N = int(rng.integers(30, 120)), int(rng.integers(100, 10_001))
            cols = rng.normal(size=(n, N))
            dup = rng.choice(N, size=min(20, N // 2), replace=False)
            cols[:, dup[1::2]] = cols[:, dup[::2]]
            y = cols[:, :3].sum(axis=1) + rng.normal(size=n)
            K = int(rng.integers(1, 500))
            got = screen(column_chunks(cols, int(rng.integers(1, 2000))), y, K).descriptors
            same += set(got) == set(brute_force_topk(cols, y, K))
        return same
    same, s = timed(run)
    return report(2, same == 50 and s < 30, f"{same}/50 universes set-identical to brute force", s)


def _map_grid(x, y, lam, w, sigma):
    """Nested-grid minimiser of RSS/(2 sigma^2) + lam w |c| / sigma."""
    yc = y - y.mean()
    obj = lambda c: np.sum((yc[None, :] - c[:, None] * x[None, :]) ** 2, axis=1) / (2 * sigma ** 2) \
        + lam * w * np.abs(c) / sigma
    lo, hi = -50.0, 50.0
    for _ in range(7):
        grid = np.linspace(lo, hi, 2001)
        k = int(np.argmin(obj(grid)))
        lo, hi = grid[max(k - 2, 0)], grid[min(k + 2, 2000)]
    return grid[k]


def criterion_3():
    def run():
        empty = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            empty += lp.fit(rng.normal(size=(500, 50)), rng.normal(size=500)).support.size == 0
        rng = np.random.default_rng(1000)
        x = rng.normal(size=500)
        x = (x - x.mean()) / x.std()
        y = 3 * x + rng.normal(size=500)
        fit = lp.fit(x[:, None], y, lp.LassoPlusConfig(tol=1e-13, max_iter=5000))
        gap = abs(fit.c[0] - _map_grid(x, y, fit.lam, fit.w[0], fit.sigma))
        return empty, gap
    (empty, gap), s = timed(run)
    ok = empty >= 95 and gap < 1e-6 and s < 300
    return report(3, ok, f"empty support in {empty}/100 noise fits; |c - grid MAP| = {gap:.2e}", s)


def _treatment_knots(model):
    knots = []
    for d in model.active_descriptors():
        for f in d.factors:
            if f.variable != model.focus[0]:
                continue
            if f.family == HINGE:
                knots.append(f.knot)
            elif f.knots is not None:
                knots.extend(f.knots.full(f.degree))
    return np.unique(knots)


def criterion_4():
    def run():
        draw = generate(SimSpec("nonlinear", 1000, 8, 0))
        model = fit_mde(draw.y, draw.t, draw.X)
        rng = np.random.default_rng(4)
        V = draw.V[rng.integers(0, 1000, 1000)].copy()
        V[:, 0] = rng.uniform(draw.t.min(), draw.t.max(), 1000)
        knots = _treatment_knots(model)
        far = np.min(np.abs(V[:, :1] - knots[None, :]), axis=1) > 1e-3 if knots.size else np.ones(1000, bool)
        h = 1e-6
        up, dn = V.copy(), V.copy()
        up[:, 0] += h
        dn[:, 0] -= h
        central = (predict(model, up) - predict(model, dn)) / (2 * h)
        fwd = local_effect(model, V)
        rel = np.abs(fwd - central) / np.maximum(1.0, np.abs(central))
        return rel[far].max(), int(far.sum())
    (worst, m), s = timed(run)
    return report(4, worst < 1e-4 and s < 60, f"max relative gap {worst:.2e} over {m} points off knots", s)


def criterion_5(reps=20):
    def run():
        grid = [(st, 2000, 10) for st in ("linear", "interactive", "nonlinear", "discontinuous")]
        return run_benchmark(grid, methods=("mde", "ols"), reps=reps)
    rows, s = timed(run)
    parts, ok = [], True
    for st in ("linear", "interactive", "nonlinear", "discontinuous"):
        m = [r for r in rows if r["setting"] == st and r["method"] == "mde"]
        o = {r["rep"]: r for r in rows if r["setting"] == st and r["method"] == "ols"}
        below = all(r["rmse"] < 1 and r["rmse_nabla"] < 1 for r in m)
        ok &= below
        msg = f"{st}: max rmse {max(r['rmse'] for r in m):.2f}, max rmse_nabla {max(r['rmse_nabla'] for r in m):.2f}"
        if st != "linear":
            wins = np.mean([r["rmse_nabla"] <= o[r["rep"]]["rmse_nabla"] for r in m])
            ok &= wins >= 0.8
            msg += f", beats OLS in {wins:.0%}"
        parts.append(msg)
    return report(5, ok and s < 7200, "; ".join(parts), s)


def criterion_6():
    def run():
        rng = np.random.default_rng(6)
        n = 1000
        X = rng.normal(size=(n, 2))
        t = rng.normal(size=n) + 0.5 * X[:, 0]
        m = np.sin(t) + 0.5 * X[:, 1] + 0.3 * rng.normal(size=n)
        y = 0.5 * t + m + 0.5 * t * m + X[:, 0] + 0.5 * rng.normal(size=n)
        res = fit_mediation(y, m, t, X)
        rows = rng.choice(n, 100, replace=False)
        bound = curvature_bound(res)[rows]
        # floating-point floor of a difference quotient at step delta
        floor = 64 * np.finfo(float).eps * np.max(np.abs(res.y_model.fitted)) / res.delta
        band = 10 * res.delta * bound + floor
        add = np.abs(res.total - res.direct - res.mediated)[rows]
        prod = product_rule_check(res)[2][rows]
        return np.mean(add <= band), np.mean(prod <= band), add.max(), prod.max()
    (a, p, amax, pmax), s = timed(run)
    ok = a == 1 and p == 1 and s < 600
    return report(6, ok, f"additivity within band at {a:.0%} of rows (max gap {amax:.1e}), "
                         f"product rule at {p:.0%} (max gap {pmax:.1e})", s)


def criterion_7(reps=25, null_reps=10):
    def run():
        comp, closer, details = [], 0, []
        for seed in range(reps):
            d = generate(SimSpec("iv_linear", 2000, 10, seed))
            res = fit_iv(d.y, d.t, d.z, d.X)
            encouraged = d.dt_dz != 0
            comp.append(np.mean(res.compliance[encouraged] == COMPLIER))
            ident = res.identified
            truth = d.dmu_dt[ident].mean()
            mean_lice, _ = res.mean_lice()
            naive = ols(d.y, d.t, d.X).deriv[0]
            closer += abs(mean_lice - truth) < abs(naive - truth)
        nonc = []
        for seed in range(null_reps):
            d = generate(SimSpec("iv_null", 2000, 10, seed))
            res = fit_iv(d.y, d.t, d.z, d.X)
            nonc.append(np.mean(res.compliance == NONCOMPLIER))
        return np.mean(comp), np.mean(nonc), closer
    (c, nn, closer), s = timed(run)
    ok = c >= 0.9 and nn >= 0.9 and closer >= 0.9 * reps and s < 3600
    return report(7, ok, f"compliers among encouraged {c:.1%}; noncompliers under null {nn:.1%}; "
                         f"mean LICE closer than OLS in {closer}/{reps}", s)


def criterion_8():
    def run():
        rng = np.random.default_rng(8)
        n = 1000
        X = rng.normal(size=(n, 2))
        f = 1 + X[:, 0] - 0.5 * X[:, 1]
        t = f + rng.normal(size=n)
        ens = resample.treatment_ensemble(t, X, B=100, seed=0)
        lo, hi = resample.extrapolation_range(ens, 0.10)
        fresh = f[None, :] + rng.normal(size=(20, n))
        return np.mean((fresh >= lo) & (fresh <= hi)), ens.n_failed
    (cov, failed), s = timed(run)
    ok = abs(cov - 0.90) <= 0.05 and s < 1200
    return report(8, ok, f"coverage {cov:.1%} of 20 fresh draws per row ({failed} failed replicates)", s)


def criterion_9(runs=50, B=21):
    def run():
        wins = 0
        for seed in range(runs):
            rng = np.random.default_rng(seed)
            n = 300
            X = rng.normal(size=(n, 2))
            t = rng.normal(size=n) + 0.5 * X[:, 0]
            y = np.sin(2 * t) * (1 + 0.5 * X[:, 1]) + X[:, 0] + 0.5 * rng.standard_t(2, size=n)
            d = 2 * np.cos(2 * t) * (1 + 0.5 * X[:, 1])
            ens = resample.wild_bootstrap(y, stack(t, X), B, seed)
            point = local_effect(ens.base, ens.V)
            bagged = resample.bagged_effect(ens)
            wins += np.sqrt(np.mean((bagged - d) ** 2)) <= np.sqrt(np.mean((point - d) ** 2))
        return wins
    wins, s = timed(run)
    ok = wins >= 0.8 * runs and s < 1800
    return report(9, ok, f"bagged RMSE <= point RMSE in {wins}/{runs} heavy-tailed runs (B={B})", s)


LALONDE_COVARIATES = ("age", "educ", "black", "hisp", "married", "nodegr", "re74", "re75")


def criterion_10():
    path = os.environ.get("MDE_LALONDE_CSV")
    if not path:
        line = "SKIP criterion 10: set MDE_LALONDE_CSV to a LaLonde CSV (columns treat, re78, " \
               + ", ".join(LALONDE_COVARIATES) + ")"
        RESULTS[10] = line
        print(line, file=sys.__stdout__, flush=True)
        return None

    def run():
        from mde.cli import Dataset
        from mde.core import att
        ds = Dataset.read(path)
        T, y, X = ds.col("treat"), ds.col("re78"), ds.cols(list(LALONDE_COVARIATES))
        model = fit_mde(y, T, X)
        return att(model, stack(T, X))
    est, s = timed(run)
    # reported, not asserted: the experimental benchmark is 886.30
    return report(10, True, f"ATT {est:.2f} (experimental benchmark 886.30)", s)


# ------------------------------------------------------------------ pytest

@pytest.mark.parametrize("k", range(1, 10))
@pytest.mark.slow
def test_criterion(k):
    assert globals()[f"criterion_{k}"](), RESULTS[k]


def test_criterion_10_lalonde():
    if criterion_10() is None:
        pytest.skip("no LaLonde data supplied")


if __name__ == "__main__":
    for k in range(1, 11):
        globals()[f"criterion_{k}"]()
