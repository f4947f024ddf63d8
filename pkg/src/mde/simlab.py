"""Simulation designs, evaluation metrics, linear baselines and benchmark runner."""
from __future__ import annotations

import csv
import time
import traceback
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Callable, Iterable

import numpy as np

OUTCOME_SETTINGS = ("linear", "interactive", "nonlinear", "discontinuous")
IV_SETTINGS = ("iv_null", "iv_linear", "iv_interactive", "iv_nonlinear", "iv_discontinuous")
SETTINGS = OUTCOME_SETTINGS + IV_SETTINGS
CALIBRATION_N = 100_000
IV_CORR = 0.9


@dataclass(frozen=True)
class SimSpec:
    setting: str
    n: int
    p: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ValueError(f"unknown setting {self.setting!r}")
        if self.p < 8:
            raise ValueError("p must be >= 8")
        if self.n < 50:
            raise ValueError("n must be >= 50")


@dataclass
class SimDraw:
    y: np.ndarray
    t: np.ndarray
    X: np.ndarray
    mu: np.ndarray
    dmu_dt: np.ndarray
    z: np.ndarray | None = None
    dt_dz: np.ndarray | None = None
    beta: np.ndarray | None = None
    noise_sd: float = 0.0

    @property
    def V(self) -> np.ndarray:
        return np.column_stack([self.t, self.X])


def _covariates(rng, n, p):
    cov = np.full((p, p), 0.5)
    np.fill_diagonal(cov, 1.0)
    return rng.multivariate_normal(np.zeros(p), cov, size=n, method="cholesky")


def _confounded(rng, X):
    """-3 + (X1 + X4)^2 + N(0, 4); shared by the treatment and the instrument."""
    return -3 + (X[:, 0] + X[:, 3]) ** 2 + rng.normal(0.0, 2.0, size=X.shape[0])


def _surface(setting, t, X, beta):
    """Systematic part and its right-limit derivative in t for outcome designs."""
    lin = X[:, 4:8] @ beta
    if setting == "linear":
        return t + lin, np.ones_like(t)
    if setting == "interactive":
        return t - t * X[:, 2] + lin + X[:, 0] * X[:, 1], 1 - X[:, 2]
    if setting == "nonlinear":
        a = X[:, 0] - 0.5
        b = 0.5 * (1 + np.maximum(X[:, 2] * X[:, 3], 0.0))
        return 20 * np.sin(a * t / 20) + b * (1 + t) + lin, a * np.cos(a * t / 20) + b
    if setting == "discontinuous":
        on = np.abs(t) > 0.5
        g = X[:, 4] + 1
        f = (1 + np.abs(t)) * on * g + lin + X[:, 0] * X[:, 1]
        slope = np.where(t >= 0.5, 1.0, np.where(t < -0.5, -1.0, 0.0))
        return f, slope * g
    if setting == "null":
        return lin, np.zeros_like(t)
    raise ValueError(setting)


def _iv_outcome(t, X, beta):
    """|t - 2| + sum beta X + X1 X2, derivative with the right limit at t = 2."""
    f = np.abs(t - 2) + X[:, 4:8] @ beta + X[:, 0] * X[:, 1]
    return f, np.where(t >= 2, 1.0, -1.0)


@lru_cache(maxsize=64)
def _outcome_noise_sd(setting: str, p: int, beta: tuple) -> float:
    """Noise sd giving R^2 = 0.5 against a large calibration draw."""
    rng = np.random.default_rng([7, p, SETTINGS.index(setting)])
    X = _covariates(rng, CALIBRATION_N, p)
    t = _confounded(rng, X)
    mu, _ = _surface(setting, t, X, np.asarray(beta))
    return float(np.sqrt(np.var(mu)))


@lru_cache(maxsize=64)
def _iv_noise_scale(setting: str, p: int, beta: tuple) -> float:
    """Scale C of the error pair so that the outcome signal-to-noise ratio is 1."""
    rng = np.random.default_rng([11, p, SETTINGS.index(setting)])
    X = _covariates(rng, CALIBRATION_N, p)
    z = _confounded(rng, X)
    e = rng.standard_normal((CALIBRATION_N, 2))
    first, _ = _surface(setting[3:], z, X, np.asarray(beta))
    C = 1.0
    for _ in range(50):
        t = first + np.sqrt(C) * e[:, 0]
        f, _ = _iv_outcome(t, X, np.asarray(beta))
        new = float(np.var(f))
        if abs(new - C) < 1e-10 * C:
            break
        C = new
    return C


def generate(spec: SimSpec) -> SimDraw:
    rng = np.random.default_rng([spec.seed, spec.n, spec.p, SETTINGS.index(spec.setting)])
    beta = rng.standard_normal(4)
    X = _covariates(rng, spec.n, spec.p)
    key = tuple(float(b) for b in beta)
    if spec.setting in OUTCOME_SETTINGS:
        t = _confounded(rng, X)
        mu, d = _surface(spec.setting, t, X, beta)
        sd = _outcome_noise_sd(spec.setting, spec.p, key)
        y = mu + rng.normal(0.0, sd, size=spec.n)
        return SimDraw(y, t, X, mu, d, beta=beta, noise_sd=sd)
    z = _confounded(rng, X)
    C = _iv_noise_scale(spec.setting, spec.p, key)
    chol = np.linalg.cholesky(C * np.array([[1.0, IV_CORR], [IV_CORR, 1.0]]))
    e = rng.standard_normal((spec.n, 2)) @ chol.T
    first, dz = _surface(spec.setting[3:], z, X, beta)
    t = first + e[:, 0]
    mu, d = _iv_outcome(t, X, beta)
    return SimDraw(mu + e[:, 1], t, X, mu, d, z=z, dt_dz=dz, beta=beta, noise_sd=float(np.sqrt(C)))


# ------------------------------------------------------------------ metrics

def metrics(mu, dmu_dt, fitted, fitted_deriv, y_bar):
    """(rmse, rmse_nabla, bias_nabla); the derivative metrics are nan when dmu_dt == 0."""
    mu, d, f, fd = (np.asarray(a, dtype=float) for a in (mu, dmu_dt, fitted, fitted_deriv))
    rmse = float(np.sqrt(np.sum((mu - f) ** 2) / np.sum((mu - y_bar) ** 2)))
    dd = float(np.sum(d ** 2))
    if dd == 0:
        return rmse, float("nan"), float("nan")
    return (rmse, float(np.sqrt(np.sum((d - fd) ** 2) / dd)),
            float(abs(np.sum(d - fd)) / np.sqrt(dd)))


def derivative_decomposition(t, dmu_hat):
    """Project the estimated derivative on (1, t): (linear part, nonlinear part)."""
    t = np.asarray(t, dtype=float)
    dmu_hat = np.asarray(dmu_hat, dtype=float)
    if t.size < 3:
        raise ValueError("need n >= 3")
    if np.ptp(t) == 0:
        raise ValueError("t is constant")
    A = np.column_stack([np.ones_like(t), t])
    coef, *_ = np.linalg.lstsq(A, dmu_hat, rcond=None)
    lin = A @ coef
    return lin, dmu_hat - lin


# ---------------------------------------------------------------- baselines

@dataclass
class BaselineFit:
    fitted: np.ndarray
    deriv: np.ndarray
    ridge: bool = False
    complies: bool | None = None
    f_stat: float | None = None


def _ls(A, y):
    """Least squares with a ridge fallback on a singular design."""
    if np.linalg.matrix_rank(A) < A.shape[1]:
        lam = 1e-6 * np.trace(A.T @ A) / A.shape[1]
        coef = np.linalg.solve(A.T @ A + lam * np.eye(A.shape[1]), A.T @ y)
        return coef, True
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return coef, False


def ols(y, t, X) -> BaselineFit:
    A = np.column_stack([np.ones_like(t), t, X])
    coef, ridge = _ls(A, y)
    return BaselineFit(A @ coef, np.full_like(t, coef[1]), ridge)


def null(y, t, X=None) -> BaselineFit:
    return BaselineFit(np.full_like(y, y.mean()), np.zeros_like(t))


def tsls(y, t, z, X) -> BaselineFit:
    """Linear two-stage least squares; no compliance at all when first-stage F < 10."""
    n = len(y)
    A0 = np.column_stack([np.ones(n), X])
    A1 = np.column_stack([A0, z])
    g, r1 = _ls(A1, t)
    g0, _ = _ls(A0, t)
    rss1 = float(np.sum((t - A1 @ g) ** 2))
    rss0 = float(np.sum((t - A0 @ g0) ** 2))
    F = (rss0 - rss1) / (rss1 / (n - A1.shape[1]))
    t_hat = A1 @ g
    A2 = np.column_stack([np.ones(n), t_hat, X])
    coef, r2 = _ls(A2, y)
    fitted = np.column_stack([np.ones(n), t, X]) @ coef
    complies = F >= 10
    deriv = np.full(n, coef[1] if complies else np.nan)
    return BaselineFit(fitted, deriv, r1 or r2, complies, float(F))


def baselines(draw: SimDraw) -> dict:
    out = {"ols": ols(draw.y, draw.t, draw.X), "null": null(draw.y, draw.t)}
    if draw.z is not None:
        out["tsls"] = tsls(draw.y, draw.t, draw.z, draw.X)
    return out


# ------------------------------------------------------- hierarchical design

def expand_hierarchical(X_var, group_ids):
    """[group indicators : X : group means H X : within-group deviations (I - H) X]."""
    X = np.asarray(X_var, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    g = np.asarray(group_ids)
    if g.shape[0] != X.shape[0]:
        raise ValueError("group ids must cover every row")
    levels, inv = np.unique(g, return_inverse=True)
    D = np.zeros((X.shape[0], levels.size))
    D[np.arange(X.shape[0]), inv] = 1.0
    HX = group_mean(X, inv, levels.size)
    return np.column_stack([D, X, HX, X - HX])


def group_mean(X, inv, n_groups):
    sums = np.zeros((n_groups, X.shape[1]))
    np.add.at(sums, inv, X)
    counts = np.bincount(inv, minlength=n_groups)[:, None]
    return (sums / counts)[inv]


# ---------------------------------------------------------------- benchmark

FIELDS = ("setting", "n", "p", "rep", "method", "rmse", "rmse_nabla", "bias_nabla", "runtime", "error")


def _mde_method(draw: SimDraw, config=None):
    from .core import fit_mde, local_effect
    model = fit_mde(draw.y, draw.t, draw.X, config)
    return model.fitted, local_effect(model, draw.V)


def _run_method(method: str, draw: SimDraw):
    if method == "mde":
        return _mde_method(draw)
    if method in ("ols", "null"):
        b = ols(draw.y, draw.t, draw.X) if method == "ols" else null(draw.y, draw.t)
        return b.fitted, b.deriv
    if method == "tsls":
        b = tsls(draw.y, draw.t, draw.z, draw.X)
        return b.fitted, np.nan_to_num(b.deriv)
    raise ValueError(f"unknown method {method!r}")


def run_benchmark(grid: Iterable[tuple], methods=("mde", "ols", "null"), reps: int = 1,
                  seed: int = 0, out_path=None, method_fns: dict | None = None) -> list[dict]:
    """Long table over (setting, n, p) cells; failures are recorded, not raised.

    With ``out_path`` rows are appended as they finish and cells already in
    the file are skipped, so an interrupted run can be resumed.
    """
    done = set()
    if out_path is not None:
        try:
            with open(out_path, newline="") as fh:
                for row in csv.DictReader(fh):
                    done.add((row["setting"], int(row["n"]), int(row["p"]), int(row["rep"]), row["method"]))
        except FileNotFoundError:
            with open(out_path, "w", newline="") as fh:
                csv.DictWriter(fh, FIELDS).writeheader()
    rows = []
    for setting, n, p in grid:
        for rep in range(reps):
            draw = generate(SimSpec(setting, n, p, seed * 1_000_003 + rep))
            for method in methods:
                if (setting, n, p, rep, method) in done:
                    continue
                t0 = time.perf_counter()
                row = dict(setting=setting, n=n, p=p, rep=rep, method=method,
                           rmse=float("nan"), rmse_nabla=float("nan"), bias_nabla=float("nan"), error="")
                try:
                    fn = (method_fns or {}).get(method)
                    fitted, deriv = fn(draw) if fn else _run_method(method, draw)
                    row.update(zip(("rmse", "rmse_nabla", "bias_nabla"),
                                   metrics(draw.mu, draw.dmu_dt, fitted, deriv, draw.y.mean())))
                except Exception as exc:  # recorded per cell, the run continues
                    row["error"] = f"{type(exc).__name__}: {exc}"
                    traceback.print_exc()
                row["runtime"] = time.perf_counter() - t0
                rows.append(row)
                if out_path is not None:
                    with open(out_path, "a", newline="") as fh:
                        csv.DictWriter(fh, FIELDS).writerow(row)
    return rows


def read_grid(path) -> list[tuple]:
    """Grid file of key=value lines: settings=a,b  n=100,500  p=10."""
    cfg = {}
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                k, v = line.split("=", 1)
                cfg[k.strip()] = [s.strip() for s in v.split(",") if s.strip()]
    return [(s, int(n), int(p)) for s in cfg.get("settings", ["linear"])
            for n in cfg.get("n", ["500"]) for p in cfg.get("p", ["10"])]
