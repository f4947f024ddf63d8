"""Versioned JSON model files that round-trip every float bit for bit."""
from __future__ import annotations

import dataclasses
import hashlib
import json

import numpy as np

from .basis import BasisDescriptor, BasisFactor, KnotVector
from .core import MdeConfig, MdeModel
from .lassoplus import LassoPlusConfig, LassoPlusFit

FORMAT = "mde-model"
VERSION = 1


class ModelFileError(ValueError):
    pass


def _h(x: float) -> str:
    return float(x).hex()


def _uh(s: str) -> float:
    return float.fromhex(s)


def _harr(a) -> list:
    return [_h(v) for v in np.asarray(a, dtype=float).ravel()]


def _uharr(a) -> np.ndarray:
    return np.array([_uh(v) for v in a], dtype=float)


def _factor_to(f: BasisFactor) -> dict:
    d = {"variable": f.variable, "family": f.family, "degree": f.degree,
         "index": f.index, "knot": _h(f.knot), "center": _h(f.center)}
    if f.knots is not None:
        d["knots"] = {"interior": _harr(f.knots.interior), "low": _h(f.knots.boundary_low),
                      "high": _h(f.knots.boundary_high)}
    return d


def _factor_from(d: dict) -> BasisFactor:
    kv = None
    if "knots" in d:
        k = d["knots"]
        kv = KnotVector(tuple(float(v) for v in _uharr(k["interior"])), _uh(k["low"]), _uh(k["high"]))
    return BasisFactor(d["variable"], d["family"], d["degree"], kv, d["index"], _uh(d["knot"]), _uh(d["center"]))


def model_to_dict(m: MdeModel) -> dict:
    factors, ids = [], {}
    descs = []
    for d in m.descriptors:
        refs = []
        for f in d.factors:
            if f not in ids:
                ids[f] = len(factors)
                factors.append(_factor_to(f))
            refs.append(ids[f])
        descs.append({"factors": refs, "center": _h(d.center)})
    fit = m.fit
    return {
        "factors": factors,
        "descriptors": descs,
        "fit": {"c": _harr(fit.c), "mu_y": _h(fit.mu_y), "lam": _h(fit.lam), "w": _harr(fit.w),
                "gamma": _h(fit.gamma), "sigma2": _h(fit.sigma2), "n_iter": fit.n_iter,
                "converged": bool(fit.converged), "improper_prior": bool(fit.improper_prior),
                "objective_trace": _harr(fit.objective_trace)},
        "treat_range": _harr(m.treat_range),
        "cov_ranges": [_harr(r) for r in m.cov_ranges],
        "delta": _h(m.delta),
        "treatment_kind": m.treatment_kind,
        "focus": list(m.focus),
        "n_vars": m.n_vars,
        "screen_status": m.screen_status,
    }


def model_from_dict(d: dict) -> MdeModel:
    factors = [_factor_from(f) for f in d["factors"]]
    descs = [BasisDescriptor(tuple(factors[i] for i in x["factors"]), _uh(x["center"])) for x in d["descriptors"]]
    f = d["fit"]
    c = _uharr(f["c"])
    fit = LassoPlusFit(c, _uh(f["mu_y"]), _uh(f["lam"]), _uharr(f["w"]), _uh(f["gamma"]), _uh(f["sigma2"]),
                       np.nonzero(c)[0], list(_uharr(f["objective_trace"])), f["n_iter"], f["converged"],
                       f["improper_prior"])
    return MdeModel(descs, fit, tuple(_uharr(d["treat_range"])), [tuple(_uharr(r)) for r in d["cov_ranges"]],
                    _uh(d["delta"]), d["treatment_kind"], tuple(d["focus"]), d["n_vars"],
                    screen_status=d["screen_status"])


def config_to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def mde_config_from_dict(d: dict | None) -> MdeConfig:
    if not d:
        return MdeConfig()
    d = dict(d)
    lasso = LassoPlusConfig(**d.pop("lasso", {}))
    return MdeConfig(lasso=lasso, **d)


def digest(obj) -> str:
    if isinstance(obj, np.ndarray):
        data = np.ascontiguousarray(obj, dtype=float).tobytes()
    else:
        data = json.dumps(obj, sort_keys=True).encode()
    return hashlib.sha256(data).hexdigest()


def dumps(kind: str, models: dict, config: dict, columns: dict, seed: int | None,
          data: np.ndarray | None, extra: dict | None = None) -> str:
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "kind": kind,
        "columns": columns,
        "config": config,
        "models": {k: model_to_dict(m) for k, m in models.items()},
        "provenance": {"seed": seed, "config_hash": digest(config),
                       "data_hash": digest(data) if data is not None else None},
    }
    if extra:
        doc["extra"] = extra
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def save(path, *args, **kwargs) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(*args, **kwargs))


def loads(text: str) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"not a model file: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise ModelFileError("not a model file")
    if doc.get("version") != VERSION:
        raise ModelFileError(f"unsupported model file version {doc.get('version')!r}")
    doc["models"] = {k: model_from_dict(v) for k, v in doc["models"].items()}
    return doc


def load(path) -> dict:
    with open(path) as fh:
        return loads(fh.read())
