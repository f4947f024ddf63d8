"""Mediation: total, direct and mediated effects, CDE and the blip function.

The outcome surface is fitted once on V = [t, m, X] with both t and m
perturbable; the mediator surface is fitted on [t, X_pre].  All effects are
forward differences taken from the observed (t_i, m_i).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DomainError, MdeConfig, MdeModel, fit_surface, predict, set_value, shifted
from .basis import treatment_kind

T_VAR, M_VAR = 0, 1


@dataclass(frozen=True)
class MediationResult:
    y_model: MdeModel
    m_model: MdeModel
    V: np.ndarray            # [t, m, X]
    pre: np.ndarray          # indices of X columns used by the mediator model
    delta: float
    total: np.ndarray
    direct: np.ndarray
    mediated: np.ndarray
    mediator_direct: np.ndarray
    first_stage_med: np.ndarray

    @property
    def product_gap(self) -> np.ndarray:
        return np.abs(self.mediated - self.mediator_direct * self.first_stage_med)


def y_design(t, m, X=None) -> np.ndarray:
    t = np.asarray(t, dtype=float).reshape(-1)
    m = np.asarray(m, dtype=float).reshape(-1)
    cols = [t, m]
    if X is not None:
        X = np.asarray(X, dtype=float)
        cols.append(X[:, None] if X.ndim == 1 else X)
    return np.column_stack(cols)


def m_design(V, pre) -> np.ndarray:
    """[t, X_pre] from the outcome design V = [t, m, X]."""
    return np.column_stack([V[:, T_VAR], V[:, 2 + np.asarray(pre, dtype=int)]]) if len(pre) else V[:, :1]


def mediator_shift(m_model: MdeModel, V, pre, delta: float) -> np.ndarray:
    """M_hat(t + delta, x) - M_hat(t, x)."""
    W = m_design(V, pre)
    return predict(m_model, shifted(W, 0, delta)) - predict(m_model, W)


def fit_mediation(y, m, t, X=None, config: MdeConfig | None = None, pre=None) -> MediationResult:
    """``pre`` lists the X columns that are pre-treatment (default: all)."""
    cfg = config or MdeConfig()
    V = y_design(t, m, X)
    for name, v in (("mediator", V[:, M_VAR]), ("treatment", V[:, T_VAR])):
        kind = treatment_kind(v)
        if kind == "constant":
            raise ValueError(f"{name} is constant")
        if kind != "continuous":
            raise DomainError(f"{name} must be continuous, got {kind}")
    p = V.shape[1] - 2
    pre = np.arange(p) if pre is None else np.asarray(pre, dtype=int)
    if pre.size and (pre.min() < 0 or pre.max() >= p):
        raise ValueError("pre-treatment column index out of range")
    # the mediator also enters as a covariate so that T x M interactions are candidates
    y_model = fit_surface(y, V, focus=(T_VAR, M_VAR), covariates=[M_VAR] + list(range(2, 2 + p)), config=cfg)
    m_model = fit_surface(V[:, M_VAR], m_design(V, pre), focus=(0,), config=cfg)
    return evaluate(y_model, m_model, V, pre, cfg.delta)


def evaluate(y_model: MdeModel, m_model: MdeModel, V, pre, delta: float) -> MediationResult:
    V = np.asarray(V, dtype=float)
    dm = mediator_shift(m_model, V, pre, delta)
    base = predict(y_model, V)
    moved_t = shifted(V, T_VAR, delta)
    total = (predict(y_model, shifted(moved_t, M_VAR, dm)) - base) / delta
    direct = (predict(y_model, moved_t) - base) / delta
    mediated = (predict(y_model, shifted(V, M_VAR, dm)) - base) / delta
    md = (predict(y_model, shifted(V, M_VAR, delta)) - base) / delta
    return MediationResult(y_model, m_model, V, np.asarray(pre, dtype=int), delta,
                           total, direct, mediated, md, dm / delta)


def product_rule_check(res: MediationResult):
    """(lhs, rhs, gap) with lhs the mediated effect and rhs mediator_direct * first_stage_med."""
    rhs = res.mediator_direct * res.first_stage_med
    return res.mediated, rhs, np.abs(res.mediated - rhs)


def curvature_bound(res: MediationResult, h: float = 1e-4) -> np.ndarray:
    """Per-row bound on second derivatives of both surfaces, scaled by the mediator slope.

    Central second differences with step h in (t, m) for the outcome surface
    and in t for the mediator surface.
    """
    V, f = res.V, res.y_model
    f0 = predict(f, V)

    def second(var):
        return np.abs(predict(f, shifted(V, var, h)) - 2 * f0 + predict(f, shifted(V, var, -h))) / h ** 2

    mixed = np.abs(predict(f, shifted(shifted(V, T_VAR, h), M_VAR, h)) - predict(f, shifted(shifted(V, T_VAR, h), M_VAR, -h))
                   - predict(f, shifted(shifted(V, T_VAR, -h), M_VAR, h))
                   + predict(f, shifted(shifted(V, T_VAR, -h), M_VAR, -h))) / (4 * h * h)
    W = m_design(V, res.pre)
    m0 = predict(res.m_model, W)
    m_tt = np.abs(predict(res.m_model, shifted(W, 0, h)) - 2 * m0 + predict(res.m_model, shifted(W, 0, -h))) / h ** 2
    s = np.maximum(1.0, np.abs(res.first_stage_med))
    return np.maximum.reduce([second(T_VAR), second(M_VAR) * s * s, mixed * s,
                              m_tt * np.abs(res.mediator_direct)])


def cde(res: MediationResult, m_fixed, rows=None) -> np.ndarray:
    """[Y(m_fixed, t + delta, x) - Y(m_fixed, t, x)] / delta."""
    V = res.V if rows is None else res.V[rows]
    W = set_value(V, M_VAR, m_fixed)
    return (predict(res.y_model, shifted(W, T_VAR, res.delta)) - predict(res.y_model, W)) / res.delta


def blip(y_model: MdeModel, t_hi, t_lo, V) -> np.ndarray:
    """Y(t_hi, x) - Y(t_lo, x) on the fitted surface."""
    if not (np.all(np.isfinite(t_hi)) and np.all(np.isfinite(t_lo))):
        raise ValueError("treatment values must be finite")
    V = np.atleast_2d(np.asarray(V, dtype=float))
    v = y_model.focus[0]
    return predict(y_model, set_value(V, v, t_hi)) - predict(y_model, set_value(V, v, t_lo))


def table(res: MediationResult) -> dict:
    return {"total": res.total, "direct": res.direct, "mediated": res.mediated,
            "mediator_direct": res.mediator_direct, "first_stage_med": res.first_stage_med,
            "product_gap": res.product_gap}
