"""Basis generation -> screen -> sparse fit, and counterfactual evaluation.

The fitted surface is ``mu + sum_k c_k R_k(v)`` where each R_k is a tensor
descriptor.  Local effects are forward differences of that surface in one
"focus" variable (the treatment), taken off the observed value.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import lassoplus
from .basis import (BasisDescriptor, DomainError, TensorLayout, descriptor_columns,
                    make_covariate_bases, make_treatment_bases, treatment_kind)
from .screen import screen_size, tensor_screen

DELTA = 1e-5


@dataclass(frozen=True)
class MdeConfig:
    delta: float = DELTA
    screen_k: int | None = None
    lasso: lassoplus.LassoPlusConfig = field(default_factory=lassoplus.LassoPlusConfig)

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")


@dataclass
class MdeModel:
    descriptors: list
    fit: lassoplus.LassoPlusFit
    treat_range: tuple
    cov_ranges: list
    delta: float = DELTA
    treatment_kind: str = "continuous"
    focus: tuple = (0,)
    n_vars: int = 1
    fitted: np.ndarray | None = field(default=None, repr=False)
    residuals: np.ndarray | None = field(default=None, repr=False)
    screen_status: str = "ok"

    def __post_init__(self):
        if len(self.descriptors) != len(self.fit.c):
            raise ValueError("descriptor count differs from coefficient count")

    @property
    def support(self) -> np.ndarray:
        return np.nonzero(self.fit.c)[0]

    @property
    def mu_y(self) -> float:
        return self.fit.mu_y

    def active_descriptors(self) -> list:
        return [self.descriptors[k] for k in self.support]


@dataclass
class EffectTable:
    nabla: np.ndarray
    fitted: np.ndarray
    residual: np.ndarray
    sample_average_effect: float
    ate: float | None = None
    att: float | None = None


def stack(t, X=None) -> np.ndarray:
    """Variable matrix V = [t, X] used by every evaluator."""
    t = np.asarray(t, dtype=float).reshape(-1)
    if X is None:
        return t[:, None]
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != t.shape[0]:
        raise ValueError("t and X have different row counts")
    return np.column_stack([t, X])


def fit_surface(y, V, focus=(0,), covariates=None, config: MdeConfig | None = None) -> MdeModel:
    """Fit the sparse tensor-spline surface of y on the columns of V."""
    cfg = config or MdeConfig()
    y = np.asarray(y, dtype=float)
    V = np.asarray(V, dtype=float)
    n, q = V.shape
    if y.shape[0] != n:
        raise ValueError("y and V have different row counts")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(V))):
        raise ValueError("non-finite values in inputs")
    if np.ptp(y) == 0:
        raise ValueError("outcome is constant")
    focus = tuple(int(v) for v in focus)
    if covariates is None:
        covariates = [v for v in range(q) if v not in focus]
    kind = treatment_kind(V[:, focus[0]]) if focus else "none"
    if kind == "constant":
        raise ValueError("treatment is constant")
    focus_factors = []
    for v in focus:
        focus_factors.extend(make_treatment_bases(V[:, v], v))
    cov_factors = [make_covariate_bases(V[:, v], v) for v in covariates]
    layout = TensorLayout.build(focus_factors, cov_factors)
    K = cfg.screen_k or screen_size(n)
    design = tensor_screen(layout, V, y, K)
    fit = lassoplus.fit(design, y, cfg.lasso)
    S = np.nonzero(fit.c)[0]
    fit.mu_y = float(np.mean(y - design.columns[:, S] @ fit.c[S]))
    model = MdeModel(
        descriptors=list(design.descriptors), fit=fit,
        treat_range=(float(V[:, focus[0]].min()), float(V[:, focus[0]].max())) if focus else (np.nan, np.nan),
        cov_ranges=[(float(V[:, v].min()), float(V[:, v].max())) for v in range(q)],
        delta=cfg.delta, treatment_kind=kind, focus=focus, n_vars=q,
        screen_status=design.status)
    model.fitted = predict(model, V)
    model.residuals = y - model.fitted
    return model


def fit_mde(y, t, X=None, config: MdeConfig | None = None) -> MdeModel:
    """Treatment model: y on (t, X) with t as the perturbed variable."""
    return fit_surface(y, stack(t, X), (0,), None, config)


def predict(model: MdeModel, V) -> np.ndarray:
    """mu + sum over the support of c_k * R_k(v) for each row of V."""
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if V.shape[1] < model.n_vars:
        raise DomainError(f"need {model.n_vars} variables, got {V.shape[1]}")
    S = model.support
    if S.size == 0:
        return np.full(V.shape[0], model.fit.mu_y)
    cols = descriptor_columns([model.descriptors[k] for k in S], V)
    return model.fit.mu_y + cols @ model.fit.c[S]


def predict_point(model: MdeModel, t: float, x=()) -> float:
    return float(predict(model, stack([t], np.asarray(x, dtype=float)[None, :] if len(x) else None))[0])


def extrapolated(model: MdeModel, V, var: int | None = None) -> np.ndarray:
    """Rows whose focus value lies outside the training range."""
    V = np.atleast_2d(np.asarray(V, dtype=float))
    v = model.focus[0] if var is None else var
    lo, hi = model.cov_ranges[v]
    return (V[:, v] < lo) | (V[:, v] > hi)


def predict_with_status(model: MdeModel, V):
    return predict(model, V), extrapolated(model, V)


def shifted(V, var: int, amount) -> np.ndarray:
    W = np.array(V, dtype=float, copy=True)
    W[:, var] = W[:, var] + amount
    return W


def local_effect(model: MdeModel, V, var: int | None = None, delta: float | None = None) -> np.ndarray:
    """Forward difference [f(v + delta e_var) - f(v)] / delta for each row."""
    if model.treatment_kind == "binary":
        raise DomainError("binary treatment: use binary_effect")
    if var is None and not model.focus:
        raise DomainError("model has no perturbed variable")
    V = np.atleast_2d(np.asarray(V, dtype=float))
    var = model.focus[0] if var is None else var
    d = model.delta if delta is None else delta
    return (predict(model, shifted(V, var, d)) - predict(model, V)) / d


def set_value(V, var: int, value) -> np.ndarray:
    W = np.array(V, dtype=float, copy=True)
    W[:, var] = value
    return W


def binary_effect(model: MdeModel, V) -> np.ndarray:
    if model.treatment_kind != "binary":
        raise DomainError("binary_effect needs a binary treatment")
    v = model.focus[0]
    return predict(model, set_value(V, v, 1.0)) - predict(model, set_value(V, v, 0.0))


def ate(model: MdeModel, V) -> float:
    return float(np.mean(binary_effect(model, V)))


def att(model: MdeModel, V) -> float:
    V = np.atleast_2d(np.asarray(V, dtype=float))
    treated = V[:, model.focus[0]] == 1.0
    if not treated.any():
        raise DomainError("no treated rows")
    return float(np.mean(binary_effect(model, V[treated])))


def effects(model: MdeModel, y, V) -> EffectTable:
    y = np.asarray(y, dtype=float)
    fitted = predict(model, V)
    if model.treatment_kind == "binary":
        nabla = binary_effect(model, V)
        treated = np.asarray(V)[:, model.focus[0]] == 1.0
        return EffectTable(nabla, fitted, y - fitted, float(np.mean(nabla)), float(np.mean(nabla)),
                           float(np.mean(nabla[treated])) if treated.any() else None)
    nabla = local_effect(model, V)
    return EffectTable(nabla, fitted, y - fitted, float(np.mean(nabla)))


def treatment_columns(model: MdeModel, var: int | None = None) -> np.ndarray:
    """Indices of descriptors that involve the focus variable."""
    var = model.focus[0] if var is None else var
    return np.array([k for k, d in enumerate(model.descriptors) if var in d.variables], dtype=np.int64)


def derivative_weight_diagnostic(model: MdeModel, y, V) -> np.ndarray:
    """|sum_i R_ik d(eps_i)/dT_i| per screened column.

    The residual surface is the least-squares projection of the training
    residuals onto the screened columns, so it vanishes for a perfect fit
    and is linear in y.
    """
    V = np.atleast_2d(np.asarray(V, dtype=float))
    y = np.asarray(y, dtype=float)
    eps = y - predict(model, V)
    R = descriptor_columns(model.descriptors, V)
    if R.shape[1] == 0:
        return np.zeros(0)
    coef, *_ = np.linalg.lstsq(R, eps, rcond=None)
    Rd = descriptor_columns(model.descriptors, shifted(V, model.focus[0], model.delta))
    deps = (Rd - R) @ coef / model.delta
    return np.abs(R.T @ deps)
