"""Sparse Bayesian regression with adaptive weights, fitted by EM to a MAP.

Hierarchy (per coefficient k, columns centered):
    c_k | w_k, lambda, sigma   ~ double exponential with rate lambda * w_k / sigma
    w_k | gamma                ~ density gamma / Gamma(1/gamma) * exp(-w^gamma)
    lambda^2                   ~ Gamma(n (log n + 2 log K) - K, rho)
    gamma                      ~ Exp(1)
    sigma^2                    ~ Jeffreys

Each EM sweep runs the blocks c -> w -> lambda -> gamma -> sigma^2.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numba
import numpy as np
from scipy import optimize, special

GAMMA_BOUNDS = (1e-2, 50.0)


class QuadratureError(RuntimeError):
    pass


class ImproperPriorWarning(UserWarning):
    pass


@dataclass(frozen=True)
class LassoPlusConfig:
    rho: float = 1.0
    max_iter: int = 1000
    tol: float = 1e-7
    weight_quadrature_nodes: int = 64
    c_floor: float = 1e-8
    standardize: bool = True
    max_sweeps: int = 500
    # prior terms counted in the sigma^2 mode: "all" K coefficients or only the "active" ones
    sigma_dof: str = "all"

    def __post_init__(self):
        if self.rho <= 0 or self.tol <= 0:
            raise ValueError("rho and tol must be positive")
        if self.sigma_dof not in ("active", "all"):
            raise ValueError("sigma_dof must be 'active' or 'all'")
        if self.weight_quadrature_nodes < 8:
            raise ValueError("need at least 8 quadrature nodes")


@dataclass
class LassoPlusFit:
    c: np.ndarray
    mu_y: float
    lam: float
    w: np.ndarray
    gamma: float
    sigma2: float
    support: np.ndarray
    objective_trace: list = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False
    improper_prior: bool = False

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)


# ------------------------------------------------------------------ c-step

@numba.njit(cache=True)
def _sweep(G, b, c, g, thr, idx):
    """One cyclic soft-threshold pass over ``idx``; g = b - G c is kept current."""
    biggest = 0.0
    for k in idx:
        d = G[k, k]
        if d <= 0.0:
            continue
        z = g[k] + d * c[k]
        if z > thr[k]:
            new = (z - thr[k]) / d
        elif z < -thr[k]:
            new = (z + thr[k]) / d
        else:
            new = 0.0
        delta = new - c[k]
        if delta != 0.0:
            for j in range(g.shape[0]):
                g[j] -= delta * G[j, k]
            c[k] = new
            step = abs(delta) * math.sqrt(d)
            if step > biggest:
                biggest = step
    return biggest


def coordinate_sweep(G, b, c, thresholds):
    """One full sweep of coordinate descent on 0.5*RSS + sum(thr_k |c_k|)."""
    c = np.array(c, dtype=float)
    g = b - G @ c
    _sweep(G, b, c, g, np.asarray(thresholds, dtype=float), np.arange(len(c)))
    return c


def solve_weighted_lasso(G, b, thresholds, c0=None, tol=1e-10, max_sweeps=500):
    """Minimise 0.5 c'Gc - b'c + sum(thr_k |c_k|) by active-set coordinate descent."""
    K = len(b)
    c = np.zeros(K) if c0 is None else np.array(c0, dtype=float)
    thr = np.asarray(thresholds, dtype=float)
    g = b - G @ c
    everything = np.arange(K)
    scale = max(1.0, float(np.sqrt(np.max(np.diag(G), initial=0.0))))
    for _ in range(max_sweeps):
        moved = _sweep(G, b, c, g, thr, everything)
        if moved <= tol * scale:
            break
        active = np.nonzero(c)[0]
        for _ in range(max_sweeps):
            if _sweep(G, b, c, g, thr, active) <= tol * scale:
                break
    return c


def map_objective(c, G, b, yy, lam, w, sigma):
    """Weighted-LASSO MAP objective: RSS/(2 sigma^2) + (lambda/sigma) sum w|c|."""
    rss = yy - 2 * b @ c + c @ G @ c
    return 0.5 * rss / sigma ** 2 + lam / sigma * float(np.sum(w * np.abs(c)))


# ------------------------------------------------------------------ w-step

@lru_cache(maxsize=16)
def _gauss_legendre(m: int):
    return np.polynomial.legendre.leggauss(m)


def _log_kernel_nodes(a, gamma, nodes):
    """Quadrature for the kernel exp(-w^gamma - a w) dw on (0, inf).

    The bulk is integrated in s = log w between a point six curvature
    widths left of the mode and the point where the log kernel has dropped
    by 50; the left tail is integrated in w itself, where it is smooth.
    Returns node locations s (K x J) and normalised probabilities p such
    that E[f(w)] = sum_j p_j f(exp(s_j)).
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    g = float(gamma)

    def h(x):
        with np.errstate(over="ignore"):
            return x - np.exp(g * x) - a * np.exp(x)

    # mode of h: h' = 1 - g e^{gs} - a e^s is decreasing, so bisect
    with np.errstate(divide="ignore"):
        inv_a = np.where(a > 0, 1.0 / np.maximum(a, 1e-300), np.inf)
        lo = np.minimum(np.log(0.5 / g) / g, np.log(0.5 * inv_a))
        hi = np.minimum(np.log(1.0 / g) / g, np.log(inv_a))
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        up = 1.0 - g * np.exp(g * mid) - a * np.exp(mid) > 0
        lo = np.where(up, mid, lo)
        hi = np.where(up, hi, mid)
    s0 = 0.5 * (lo + hi)
    h0 = h(s0)
    sd = 1.0 / np.sqrt(g * g * np.exp(g * s0) + a * np.exp(s0))
    # right edge where h has dropped by 50
    step = sd.copy()
    while True:
        bad = h(s0 + step) > h0 - 50
        if not bad.any():
            break
        step = np.where(bad, 2 * step, step)
    lo, hi = s0, s0 + step
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        above = h(mid) > h0 - 50
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    s_hi = hi
    s_b = s0 - 6 * sd
    n_tail = max(nodes // 4, 2)
    x_t, w_t = _gauss_legendre(n_tail)
    x_b, w_b = _gauss_legendre(nodes - n_tail)
    # bulk panel in s
    half = 0.5 * (s_hi - s_b)
    s_bulk = (0.5 * (s_hi + s_b))[:, None] + half[:, None] * x_b[None, :]
    lw_bulk = np.log(half)[:, None] + np.log(w_b)[None, :] + h(s_bulk.T).T
    # tail panel: in w on (0, e^{s_b}] when representable, else in s
    in_w = s_b < 600
    wb = np.exp(np.minimum(s_b, 600))
    w_nodes = 0.5 * wb[:, None] * (x_t[None, :] + 1)
    with np.errstate(divide="ignore"):
        s_tail_w = np.log(w_nodes)
    left = np.maximum(45.0, 12 * sd)
    s_tail_s = (s_b - 0.5 * left)[:, None] + 0.5 * left[:, None] * x_t[None, :]
    s_tail = np.where(in_w[:, None], s_tail_w, s_tail_s)
    with np.errstate(over="ignore"):
        kern = -np.exp(g * s_tail) - a[:, None] * np.exp(s_tail)
    lw_tail = np.where(in_w[:, None],
                       np.log(0.5 * wb)[:, None] + np.log(w_t)[None, :] + kern,
                       np.log(0.5 * left)[:, None] + np.log(w_t)[None, :] + s_tail + kern)
    s = np.concatenate([s_tail, s_bulk], axis=1)
    logk = np.concatenate([lw_tail, lw_bulk], axis=1)
    top = np.max(logk, axis=1, keepdims=True)
    p = np.exp(logk - top)
    mass = p.sum(axis=1, keepdims=True)
    if not np.all(np.isfinite(mass)) or np.any(mass <= 0):
        raise QuadratureError(f"weight quadrature failed (gamma={g}, a range "
                              f"[{a.min():.3g}, {a.max():.3g}])")
    return s, p / mass


def weight_posterior_mean(abs_c, lam, sigma, gamma, nodes: int = 64):
    """E[w] under exp(-w^gamma - (lam |c| / sigma) w), by quadrature."""
    a = lam * np.asarray(abs_c, dtype=float) / sigma
    s, p = _log_kernel_nodes(a, gamma, nodes)
    out = np.sum(p * np.exp(s), axis=1)
    if not np.all(np.isfinite(out)):
        raise QuadratureError("non-finite weight posterior mean")
    return out if np.ndim(abs_c) else float(out[0])


# ------------------------------------------------------------------ lambda

def lambda_prior_shape(n: int, p: int) -> float:
    return n * (math.log(n) + 2 * math.log(p)) - p


def lambda_growth_check(n: int, p: int, rho: float = 1.0) -> float:
    """Prior-mean lambda sqrt(shape/rho); nan with a warning when improper."""
    shape = lambda_prior_shape(n, p)
    if shape <= 0:
        warnings.warn(f"lambda prior improper for n={n}, p={p}", ImproperPriorWarning)
        return float("nan")
    return math.sqrt(shape / rho)


# ------------------------------------------------------------------ gamma

def _gamma_step(s, p, K, bounds=GAMMA_BOUNDS, counts=None):
    """Maximise E[log p(w | gamma)] + log Exp(1) prior under current w law.

    Rows of (s, p) may stand for several coefficients each, given by ``counts``.
    """
    cnt = np.ones(s.shape[0]) if counts is None else np.asarray(counts, dtype=float)

    def neg_q(g):
        with np.errstate(over="ignore"):
            ewg = float(cnt @ np.sum(p * np.exp(g * s), axis=1))
        if not np.isfinite(ewg):
            return 1e300
        return -(K * math.log(g) - K * special.gammaln(1.0 / g) - ewg - g)

    res = optimize.minimize_scalar(neg_q, bounds=bounds, method="bounded",
                                   options={"xatol": 1e-6})
    return float(res.x)


# ------------------------------------------------------------------ fit

def fit(design, y, cfg: LassoPlusConfig | None = None) -> LassoPlusFit:
    """EM fit on a ScreenedDesign (or raw n x K matrix of centered columns)."""
    cfg = cfg or LassoPlusConfig()
    R = np.asarray(getattr(design, "columns", design), dtype=float)
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("y has non-finite values")
    n, K = R.shape
    if n < 5:
        raise ValueError("need n >= 5")
    ybar = float(y.mean())
    yc = y - ybar
    if K == 0 or not np.any(R):
        return LassoPlusFit(np.zeros(K), ybar, 0.0, np.ones(K), 1.0, float(np.var(y)),
                            np.zeros(0, dtype=np.int64), [0.0], 0, True)
    R = R - R.mean(axis=0)
    scale = np.sqrt(np.mean(R * R, axis=0)) if cfg.standardize else np.ones(K)
    live = scale > 0
    scale = np.where(live, scale, 1.0)
    Z = R / scale
    G = Z.T @ Z
    b = Z.T @ yc
    yy = float(yc @ yc)

    shape0 = lambda_prior_shape(n, K)
    improper = shape0 <= 0
    if improper:
        warnings.warn(f"lambda prior improper (n={n}, K={K}); posterior still proper",
                      ImproperPriorWarning)
    shape_post = shape0 + K
    c = np.zeros(K)
    w = np.ones(K)
    gamma = 1.0
    sigma2 = max(float(np.var(y)), 1e-300)
    lam = math.sqrt(max(shape0, K) / cfg.rho)
    trace = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        sigma = math.sqrt(sigma2)
        thr = np.where(live, lam * sigma * w, np.inf)
        c = solve_weighted_lasso(G, b, thr, c, max_sweeps=cfg.max_sweeps)
        # w-step
        # coefficients sharing |c| (most are zero) share one quadrature
        a, inv, counts = np.unique(lam * np.abs(c) / sigma, return_inverse=True, return_counts=True)
        s, p = _log_kernel_nodes(a, gamma, cfg.weight_quadrature_nodes)
        w = np.sum(p * np.exp(s), axis=1)[inv]
        # lambda-step: Gamma posterior mean of lambda^2 given E[tau^2]
        lw = lam * w
        tau2 = np.maximum(np.abs(c), cfg.c_floor) / (lw * sigma) + 1.0 / lw ** 2
        lam = math.sqrt(shape_post / (0.5 * float(np.sum(w * w * tau2)) + cfg.rho))
        # gamma-step on the same weight law
        gamma = _gamma_step(s, p, K, counts=counts)
        # sigma^2-step: conditional mode under the Jeffreys prior
        rss = max(yy - 2 * b @ c + c @ G @ c, 0.0)
        B = lam * float(np.sum(w * np.abs(c)))
        # counting all K prior terms deflates sigma by about sqrt(n / (n + K));
        # "active" drops the zero coefficients, which carry no scale information
        nu = n + 2 + (K if cfg.sigma_dof == "all" else int(np.count_nonzero(c)))
        sig = (B + math.sqrt(B * B + 4 * nu * rss)) / (2 * nu)
        sigma2 = max(sig * sig, 1e-300)
        obj = map_objective(c, G, b, yy, lam, w, math.sqrt(sigma2))
        trace.append(float(obj))
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) <= cfg.tol * max(1.0, abs(trace[-1])):
            converged = True
            break
    coef = np.where(live, c / scale, 0.0)
    mu = float(np.mean(y - R @ coef))
    return LassoPlusFit(coef, mu, lam, w, gamma, sigma2, np.nonzero(coef)[0], trace, it,
                        converged, improper)


def predict_linear(fit_: LassoPlusFit, row) -> float:
    row = np.asarray(row, dtype=float)
    if row.shape[-1] != fit_.c.shape[0]:
        raise ValueError("row length does not match coefficient length")
    return fit_.mu_y + row @ fit_.c
