"""Instrumental variables: encouragement, ITT, LICE and compliance classification.

Two surfaces are fitted: the treatment on (instrument, X) and the outcome on
(treatment, X).  The per-row Wald ratio ITT / encouragement (the LICE) is
reported only for rows whose encouragement clears a feasible threshold.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .basis import descriptor_columns
from .core import (DomainError, MdeConfig, MdeModel, fit_surface, local_effect, predict,
                   shifted, stack, treatment_columns)
from .resample import BootstrapEnsemble, wild_bootstrap

COMPLIER, DEFIER, NONCOMPLIER = "complier", "defier", "noncomplier"


@dataclass(frozen=True)
class IvConfig:
    C: float = 2.0
    delta: float = 1e-5
    # "fitted": outcome surface trained on the first-stage fitted treatment; "observed": on T itself
    second_stage_on: str = "fitted"
    # treatment value at which the ITT is evaluated
    itt_at: str = "fitted"
    variance_share: float = 0.90
    mde: MdeConfig = field(default_factory=MdeConfig)

    def __post_init__(self):
        if self.C <= 0:
            raise ValueError("C must be positive")
        if self.second_stage_on not in ("fitted", "observed"):
            raise ValueError("second_stage_on must be 'fitted' or 'observed'")
        if self.itt_at not in ("fitted", "observed"):
            raise ValueError("itt_at must be 'fitted' or 'observed'")


@dataclass(frozen=True)
class IvResult:
    first_stage: MdeModel
    second_stage: MdeModel
    encouragement: np.ndarray
    itt: np.ndarray
    lice: np.ndarray
    compliance: np.ndarray
    df_nabla: np.ndarray
    df_adapt: np.ndarray
    threshold_value: np.ndarray
    phi0: float
    lambda_hat: float
    w_max: float
    sigma_hat: float
    C: float
    f_stat: float
    z_scale: float
    t_eval: np.ndarray = field(repr=False, default=None)

    @property
    def identified(self) -> np.ndarray:
        return self.compliance != NONCOMPLIER

    def mean_lice(self) -> tuple[float, int]:
        """Mean LICE over identified rows and their count."""
        k = int(self.identified.sum())
        return (float(np.mean(self.lice[self.identified])) if k else float("nan")), k


def _interacting(model: MdeModel, V) -> np.ndarray:
    """Selected columns that involve the focus variable, evaluated on V."""
    cols = treatment_columns(model)
    sel = np.intersect1d(cols, model.support)
    if sel.size == 0:
        return np.zeros((np.asarray(V).shape[0], 0))
    return descriptor_columns([model.descriptors[k] for k in sel], V)


def stein_df(model: MdeModel, V) -> np.ndarray:
    """Diagonal of the projection onto the selected focus-interacting columns."""
    R = _interacting(model, V)
    if R.shape[1] == 0:
        return np.zeros(R.shape[0])
    U, s, _ = np.linalg.svd(R, full_matrices=False)
    r = int(np.sum(s > s[0] * max(R.shape) * np.finfo(float).eps))
    return np.einsum("ij,ij->i", U[:, :r], U[:, :r])


def adaptive_df(df_nabla, n: int):
    df_nabla = np.asarray(df_nabla, dtype=float)
    if np.any(df_nabla < 0):
        raise ValueError("df must be non-negative")
    return (1.0 / n) / (1.0 / n + df_nabla)


def phi0_from_eigenvalues(eig, share: float = 0.90) -> float:
    """First eigenvalue (descending) whose predecessors already explain ``share``.

    Eigenvalues that are numerically zero are never returned; when no
    eigenvalue qualifies the smallest positive one is used.
    """
    e = np.sort(np.asarray(eig, dtype=float))[::-1]
    e = e[e > e[0] * 1e-12] if e.size and e[0] > 0 else e[:0]
    if e.size == 0:
        raise DomainError("no positive eigenvalues")
    before = np.concatenate([[0.0], np.cumsum(e)[:-1]]) / e.sum()
    hit = np.nonzero(before >= share)[0]
    return float(e[hit[0]] if hit.size else e[-1])


def phi0_estimate(model: MdeModel, V, share: float = 0.90) -> float:
    """phi0 on the centered, n-normalised Gram of standardised interacting columns."""
    R = _interacting(model, V)
    if R.shape[1] == 0:
        raise DomainError("no selected focus-interacting columns")
    R = R - R.mean(axis=0)
    sd = R.std(axis=0)
    R = R[:, sd > 0] / sd[sd > 0]
    return phi0_from_eigenvalues(np.linalg.eigvalsh(R.T @ R / R.shape[0]), share)


def first_stage_f(model: MdeModel, t, V, df_nabla=None) -> float:
    """Explained variance of the instrument-interacting part over residual variance."""
    t = np.asarray(t, dtype=float)
    df = float(np.sum(stein_df(model, V) if df_nabla is None else df_nabla))
    if df <= 0:
        return float("nan")
    sel = np.intersect1d(treatment_columns(model), model.support)
    part = descriptor_columns([model.descriptors[k] for k in sel], V) @ model.fit.c[sel]
    fitted = predict(model, V)
    n = t.shape[0]
    num = np.sum((part - part.mean()) ** 2) / df
    den = np.sum((t - fitted) ** 2) / (n - df)
    return float(num / den)


def classify(encouragement, threshold) -> np.ndarray:
    enc = np.asarray(encouragement, dtype=float)
    out = np.full(enc.shape, NONCOMPLIER, dtype=object)
    above = np.abs(enc) > threshold
    out[above & (enc > 0)] = COMPLIER
    out[above & (enc < 0)] = DEFIER
    return out


def encouragement(first: MdeModel, V1, delta: float) -> np.ndarray:
    return local_effect(first, V1, delta=delta)


def itt(second: MdeModel, t_eval, X, enc, delta: float) -> np.ndarray:
    V = stack(t_eval, X)
    return (predict(second, shifted(V, 0, enc * delta)) - predict(second, V)) / delta


def lice(itt_, enc, compliance) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.asarray(itt_, dtype=float) / np.asarray(enc, dtype=float)
    return np.where(np.asarray(compliance) == NONCOMPLIER, np.nan, out)


def _check(y, t, z, X):
    y, t, z = (np.asarray(a, dtype=float).reshape(-1) for a in (y, t, z))
    if not np.all(np.isfinite(z)):
        raise ValueError("instrument has non-finite values")
    if np.ptp(z) == 0:
        raise ValueError("instrument is constant")
    if X is not None:
        X = np.asarray(X, dtype=float)
        X = X[:, None] if X.ndim == 1 else X
    return y, t, z, X


def fit_iv(y, t, z, X=None, config: IvConfig | None = None) -> IvResult:
    cfg = config or IvConfig()
    y, t, z, X = _check(y, t, z, X)
    V1 = stack(z, X)
    first = fit_surface(t, V1, (0,), None, cfg.mde)
    t_train = first.fitted if cfg.second_stage_on == "fitted" else t
    second = fit_surface(y, stack(t_train, X), (0,), None, cfg.mde)
    return assemble(first, second, t, z, X, cfg)


def assemble(first: MdeModel, second: MdeModel, t, z, X, cfg: IvConfig) -> IvResult:
    n = t.shape[0]
    V1 = stack(z, X)
    enc = encouragement(first, V1, cfg.delta)
    t_eval = first.fitted if cfg.itt_at == "fitted" else t
    itt_ = itt(second, t_eval, X, enc, cfg.delta)
    df = stein_df(first, V1)
    adapt = adaptive_df(df, n)
    try:
        phi0 = phi0_estimate(first, V1, cfg.variance_share)
    except DomainError:
        phi0 = 1.0                      # no instrument terms: every encouragement is zero
    lam, sigma = float(first.fit.lam), float(first.fit.sigma)
    w_max = float(np.max(first.fit.w)) if first.fit.w.size else 0.0
    base = cfg.C * lam * w_max * sigma / (n * phi0)
    threshold = base * adapt
    z_scale = float(np.std(z))
    comp = classify(enc * z_scale, threshold)
    return IvResult(first, second, enc, itt_, lice(itt_, enc, comp), comp, df, adapt, threshold,
                    phi0, lam, w_max, sigma, cfg.C, first_stage_f(first, t, V1, df), z_scale, t_eval)


def reclassify(res: IvResult, C: float) -> np.ndarray:
    """Compliance labels under a different constant C."""
    return classify(res.encouragement * res.z_scale, res.threshold_value * (C / res.C))


# ------------------------------------------------------------------ bagging

def iv_ensembles(res: IvResult, y, t, z, X=None, B: int = 100, seed: int = 0,
                 config: IvConfig | None = None) -> tuple[BootstrapEnsemble, BootstrapEnsemble]:
    """Wild-bootstrap both stages with the same sign draws."""
    cfg = config or IvConfig()
    y, t, z, X = _check(y, t, z, X)
    V1 = stack(z, X)
    V2 = stack(res.first_stage.fitted if cfg.second_stage_on == "fitted" else t, X)
    fn = lambda yy, VV: fit_surface(yy, VV, (0,), None, cfg.mde)
    t_ens = wild_bootstrap(t, V1, B, seed, fn, base=res.first_stage)
    y_ens = wild_bootstrap(y, V2, B, seed, fn, base=res.second_stage, signs=t_ens.signs)
    return y_ens, t_ens


def replicate_ratio_parts(y_ens: BootstrapEnsemble, t_ens: BootstrapEnsemble, X=None,
                          config: IvConfig | None = None):
    """Per-replicate encouragement and ITT (rows: successful in both ensembles)."""
    cfg = config or IvConfig()
    if y_ens.B != t_ens.B or y_ens.seed != t_ens.seed:
        raise ValueError("ensembles must share B and seed")
    ok = np.intersect1d(y_ens.ok, t_ens.ok)
    V1 = t_ens.V
    X = V1[:, 1:] if X is None else X
    encs, itts = [], []
    for b in ok:
        e = encouragement(t_ens.models[b], V1, cfg.delta)
        encs.append(e)
        itts.append(itt(y_ens.models[b], t_ens.fitted[b], X, e, cfg.delta))
    return np.vstack(encs), np.vstack(itts)


def bagged_ratio(encs: np.ndarray, itts: np.ndarray) -> np.ndarray:
    """median_b(1 / enc_b) * median_b(itt_b); undefined where enc_b straddles zero."""
    straddle = (encs.min(axis=0) <= 0) & (encs.max(axis=0) >= 0)
    with np.errstate(divide="ignore"):
        inv = 1.0 / encs
    out = np.median(inv, axis=0) * np.median(itts, axis=0)
    return np.where(straddle, np.nan, out)


def bagged_lice(y_ens: BootstrapEnsemble, t_ens: BootstrapEnsemble, X=None,
                config: IvConfig | None = None) -> np.ndarray:
    encs, itts = replicate_ratio_parts(y_ens, t_ens, X, config)
    return bagged_ratio(encs, itts)
