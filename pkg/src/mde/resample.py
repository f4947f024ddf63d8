"""Rademacher wild bootstrap, median bagging, extrapolation ranges, expected effects."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import MdeModel, fit_surface, local_effect, set_value


def max_threads() -> int:
    try:
        return max(1, int(os.environ.get("MDE_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class BootstrapEnsemble:
    B: int
    seed: int
    V: np.ndarray
    base: MdeModel
    models: list
    fitted: np.ndarray          # B x n, nan rows for failed replicates
    residuals: np.ndarray       # B x n
    signs: np.ndarray           # B x n
    failed: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    errors: list = field(default_factory=list)

    @property
    def ok(self) -> np.ndarray:
        return np.nonzero(~self.failed)[0]

    @property
    def n_failed(self) -> int:
        return int(self.failed.sum())


def wild_bootstrap(y, V, B: int, seed: int, fit_fn: Callable | None = None,
                   base: MdeModel | None = None, signs: np.ndarray | None = None) -> BootstrapEnsemble:
    """Refit on y* = yhat + s * eps with s in {-1, +1} drawn from ``seed``.

    ``fit_fn(y, V) -> MdeModel``; it defaults to the plain treatment model.
    Pass ``signs`` to share sign draws between two ensembles.
    """
    if B < 2:
        raise ValueError("B must be >= 2")
    y = np.asarray(y, dtype=float)
    V = np.asarray(V, dtype=float)
    fit_fn = fit_fn or (lambda yy, VV: fit_surface(yy, VV))
    base = base or fit_fn(y, V)
    n = y.shape[0]
    if signs is None:
        signs = np.random.default_rng(seed).choice(np.array([-1.0, 1.0]), size=(B, n))
    yhat, eps = base.fitted, base.residuals

    def one(b):
        y_star = yhat + signs[b] * eps
        try:
            m = fit_fn(y_star, V)
            return m, m.fitted, y_star - m.fitted, None
        except Exception as exc:  # the replicate is marked failed
            return None, np.full(n, np.nan), np.full(n, np.nan), f"{type(exc).__name__}: {exc}"

    workers = min(max_threads(), B)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, range(B)))
    else:
        results = [one(b) for b in range(B)]
    failed = np.array([r[0] is None for r in results])
    if (~failed).sum() < B / 2:
        raise RuntimeError(f"only {(~failed).sum()} of {B} bootstrap replicates succeeded")
    return BootstrapEnsemble(B, seed, V, base, [r[0] for r in results],
                             np.vstack([r[1] for r in results]), np.vstack([r[2] for r in results]),
                             signs, failed, [r[3] for r in results if r[3]])


def replicate_effects(ens: BootstrapEnsemble, V=None) -> np.ndarray:
    """B_ok x n local effects of the successful replicates."""
    V = ens.V if V is None else V
    return np.vstack([local_effect(ens.models[b], V) for b in ens.ok])


def bagged_effect(ens: BootstrapEnsemble, V=None, effects: np.ndarray | None = None) -> np.ndarray:
    """Per-row median of replicate local effects."""
    eff = replicate_effects(ens, V) if effects is None else effects
    if eff.shape[0] < 2:
        raise ValueError("need at least two successful replicates")
    return np.median(eff, axis=0)


def derangement(B: int, seed: int) -> np.ndarray:
    """Seeded permutation with no fixed points (Sattolo's single cycle)."""
    if B < 2:
        raise ValueError("need B >= 2 for a derangement")
    rng = np.random.default_rng(seed)
    perm = np.arange(B)
    for i in range(B - 1, 0, -1):
        j = int(rng.integers(0, i))
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def treatment_draws(t_ens: BootstrapEnsemble, seed: int | None = None, pool_rows: bool = True) -> np.ndarray:
    """T_ib = That_ib + eps_jb' with b' a derangement of the successful replicates.

    Under a sign-flip bootstrap row i's own residual only takes the values
    about +-|eps_i|, so by default the partner residual comes from a seeded
    random row j of replicate b' (errors independent of X).  With
    ``pool_rows=False`` j = i.
    """
    ok = t_ens.ok
    if ok.size < 10:
        raise ValueError("need at least 10 successful replicates")
    seed = t_ens.seed + 1 if seed is None else seed
    perm = derangement(ok.size, seed)
    fitted, resid = t_ens.fitted[ok], t_ens.residuals[ok[perm]]
    if pool_rows:
        rng = np.random.default_rng([seed, 1])
        n = fitted.shape[1]
        resid = np.take_along_axis(resid, np.vstack([rng.permutation(n) for _ in range(ok.size)]), axis=1)
    return fitted + resid


def extrapolation_range(t_ens: BootstrapEnsemble, alpha: float = 0.10, seed: int | None = None,
                        pool_rows: bool = True):
    """Percentile interval of the treatment draws, per row: (low, high)."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    if t_ens.B < 10:
        raise ValueError("B must be >= 10")
    draws = treatment_draws(t_ens, seed, pool_rows)
    return np.quantile(draws, alpha / 2, axis=0), np.quantile(draws, 1 - alpha / 2, axis=0)


def expected_effect(y_model: MdeModel, t_ens: BootstrapEnsemble, V, seed: int | None = None,
                    pool_rows: bool = True) -> np.ndarray:
    """Average local effect over the estimated law of the treatment given X."""
    V = np.asarray(V, dtype=float)
    draws = treatment_draws(t_ens, seed, pool_rows)
    v = y_model.focus[0]
    return np.mean([local_effect(y_model, set_value(V, v, draws[b])) for b in range(draws.shape[0])], axis=0)


def fit_treatment_model(t, X, config=None) -> MdeModel:
    """Model of T given X only (no perturbed variable)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return fit_surface(t, X, focus=(), covariates=list(range(X.shape[1])), config=config)


def treatment_ensemble(t, X, B: int = 100, seed: int = 0, config=None) -> BootstrapEnsemble:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    fn = lambda tt, XX: fit_surface(tt, XX, focus=(), covariates=list(range(XX.shape[1])), config=config)
    return wild_bootstrap(t, X, B, seed, fn)


def summary_table(model: MdeModel, V, ens: BootstrapEnsemble | None, t_ens: BootstrapEnsemble | None,
                  alpha: float = 0.10) -> dict:
    """Columns of the ensemble CSV: effect, bagged, range_low, range_high, expected_effect, n_failed."""
    n = np.asarray(V).shape[0]
    out = {"effect": local_effect(model, V)}
    nan = np.full(n, np.nan)
    out["bagged"] = bagged_effect(ens, V) if ens is not None else nan
    if t_ens is not None:
        lo, hi = extrapolation_range(t_ens, alpha)
        out["range_low"], out["range_high"] = lo, hi
        out["expected_effect"] = expected_effect(model, t_ens, V)
    else:
        out["range_low"] = out["range_high"] = out["expected_effect"] = nan
    failed = (ens.n_failed if ens is not None else 0) + (t_ens.n_failed if t_ens is not None else 0)
    out["n_failed"] = np.full(n, failed, dtype=np.int64)
    return out
