"""Sparse tensor-spline estimation of heterogeneous causal effects."""
from .basis import DomainError, candidate_count
from .core import (EffectTable, MdeConfig, MdeModel, ate, att, effects, fit_mde, fit_surface,
                   local_effect, predict)
from .iv import IvConfig, IvResult, fit_iv
from .lassoplus import LassoPlusConfig, LassoPlusFit
from .mediation import MediationResult, fit_mediation

__all__ = [
    "DomainError", "candidate_count", "EffectTable", "MdeConfig", "MdeModel", "ate", "att", "effects",
    "fit_mde", "fit_surface", "local_effect", "predict", "IvConfig", "IvResult", "fit_iv",
    "LassoPlusConfig", "LassoPlusFit", "MediationResult", "fit_mediation",
]
