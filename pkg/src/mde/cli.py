"""Command-line drivers: fit, effects, iv, mediate, simulate, bench.

Exit codes: 0 ok, 2 usage or contract violation, 3 numerical failure (a
diagnostics JSON file is written next to the requested output).
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import traceback

import numpy as np

from . import iv as ivmod
from . import mediation as medmod
from . import persist, resample, simlab
from .basis import DomainError
from .core import MdeConfig, effects, extrapolated, fit_surface, stack
from .lassoplus import QuadratureError

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
MIN_ROWS = 10


class UsageError(Exception):
    pass


# ----------------------------------------------------------------- data io

class Dataset:
    """Numeric CSV with a header row."""

    def __init__(self, names: list[str], values: np.ndarray):
        self.names = names
        self.values = values
        self.n = values.shape[0]

    @classmethod
    def read(cls, path) -> "Dataset":
        try:
            fh = open(path, newline="")
        except OSError as exc:
            raise UsageError(f"cannot read {path}: {exc.strerror}") from None
        with fh:
            reader = csv.reader(fh)
            try:
                names = [h.strip() for h in next(reader)]
            except StopIteration:
                raise UsageError(f"{path} is empty") from None
            rows, bad = [], []
            for r, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(names):
                    raise UsageError(f"line {r}: expected {len(names)} fields, got {len(row)}")
                vals = []
                for name, cell in zip(names, row):
                    try:
                        v = float(cell)
                    except ValueError:
                        v = math.nan
                    if not math.isfinite(v):
                        bad.append(f"line {r} column {name!r}: {cell!r}")
                    vals.append(v)
                rows.append(vals)
        if bad:
            shown = "; ".join(bad[:20]) + (f"; ... {len(bad) - 20} more" if len(bad) > 20 else "")
            raise UsageError(f"non-numeric or non-finite cells: {shown}")
        if len(rows) < MIN_ROWS:
            raise UsageError(f"need at least {MIN_ROWS} rows, got {len(rows)}")
        return cls(names, np.array(rows, dtype=float))

    def col(self, name: str) -> np.ndarray:
        if name not in self.names:
            raise UsageError(f"unknown column {name!r}; available: {', '.join(self.names)}")
        return self.values[:, self.names.index(name)]

    def cols(self, names: list[str]) -> np.ndarray:
        if not names:
            return np.zeros((self.n, 0))
        return np.column_stack([self.col(c) for c in names])

    def others(self, used: list[str]) -> list[str]:
        return [c for c in self.names if c not in used]


def write_csv(path, columns: dict, row_id: bool = True) -> None:
    keys = list(columns)
    n = len(next(iter(columns.values()))) if columns else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow((["row_id"] if row_id else []) + keys)
        for i in range(n):
            w.writerow(([i] if row_id else []) + [_cell(columns[k][i]) for k in keys])


def _cell(v):
    if isinstance(v, (str, np.str_)):
        return str(v)
    if isinstance(v, (bool, np.bool_, int, np.integer)):
        return int(v)
    v = float(v)
    return "NA" if math.isnan(v) else repr(v)


def _names(arg: str | None) -> list[str] | None:
    if arg is None:
        return None
    return [s.strip() for s in arg.split(",") if s.strip()]


def _covariates(ds: Dataset, arg, used) -> list[str]:
    names = _names(arg)
    return ds.others(used) if names is None else names


def _config(args) -> MdeConfig:
    if args.delta <= 0:
        raise UsageError("--delta must be positive")
    return MdeConfig(delta=args.delta, screen_k=args.screen_k)


# ---------------------------------------------------------------- commands

def cmd_fit(args) -> int:
    ds = Dataset.read(args.data)
    y, t = ds.col(args.outcome), ds.col(args.treatment)
    covs = _covariates(ds, args.covariates, [args.outcome, args.treatment])
    X = ds.cols(covs)
    cfg = _config(args)
    V = stack(t, X)
    model = fit_surface(y, V, (0,), None, cfg)
    tab = effects(model, y, V)
    cols = {"outcome": args.outcome, "treatment": args.treatment, "covariates": covs}
    persist.save(args.model, "mde", {"main": model}, persist.config_to_dict(cfg), cols, args.seed, ds.values)
    if args.effects:
        write_csv(args.effects, {"fitted": tab.fitted, "residual": tab.residual, "nabla": tab.nabla,
                                 "extrapolated": extrapolated(model, V)})
    summary = {"sample_average_effect": tab.sample_average_effect, "support_size": int(model.support.size),
               "screened": len(model.descriptors), "treatment_kind": model.treatment_kind,
               "ate": tab.ate, "att": tab.att}
    print(json.dumps(summary))
    return EXIT_OK


def cmd_effects(args) -> int:
    doc = persist.load(args.model)
    if doc["kind"] != "mde":
        raise UsageError(f"effects needs an mde model file, got {doc['kind']!r}")
    model = doc["models"]["main"]
    roles = doc["columns"]
    ds = Dataset.read(args.data)
    V = stack(ds.col(roles["treatment"]), ds.cols(roles["covariates"]))
    cfg = persist.mde_config_from_dict(doc["config"])
    if args.delta is not None:
        model.delta = args.delta
    out = {}
    if args.bags > 0:
        if args.bags < 10:
            raise UsageError("--bags must be 0 or at least 10")
        y = ds.col(roles["outcome"])
        base = fit_surface(y, V, (0,), None, cfg)
        if not np.array_equal(base.fit.c, model.fit.c):
            raise UsageError("model file was not fitted on this data")
        fn = lambda yy, VV: fit_surface(yy, VV, (0,), None, cfg)
        ens = resample.wild_bootstrap(y, V, args.bags, args.seed, fn, base=base)
        t_ens = resample.treatment_ensemble(V[:, 0], V[:, 1:], args.bags, args.seed + 1, cfg) if V.shape[1] > 1 else None
        out = resample.summary_table(base, V, ens, t_ens, args.alpha)
    else:
        out = resample.summary_table(model, V, None, None, args.alpha)
    out["extrapolated"] = extrapolated(model, V)
    write_csv(args.out, out)
    print(json.dumps({"rows": int(V.shape[0]), "mean_effect": float(np.mean(out["effect"])), "bags": args.bags}))
    return EXIT_OK


def cmd_iv(args) -> int:
    ds = Dataset.read(args.data)
    y, t, z = ds.col(args.outcome), ds.col(args.treatment), ds.col(args.instrument)
    covs = _covariates(ds, args.covariates, [args.outcome, args.treatment, args.instrument])
    X = ds.cols(covs) if covs else None
    cfg = ivmod.IvConfig(C=args.threshold_c, delta=args.delta, mde=_config(args))
    res = ivmod.fit_iv(y, t, z, X, cfg)
    cols = {"encouragement": res.encouragement, "itt": res.itt, "lice": res.lice,
            "compliance": res.compliance, "df_nabla": res.df_nabla, "threshold_value": res.threshold_value}
    if args.bags > 0:
        y_ens, t_ens = ivmod.iv_ensembles(res, y, t, z, X, args.bags, args.seed, cfg)
        cols["bagged_lice"] = ivmod.bagged_lice(y_ens, t_ens, X, cfg)
    write_csv(args.out, cols)
    mean, k = res.mean_lice()
    summary = {"phi0": res.phi0, "f_stat": None if math.isnan(res.f_stat) else res.f_stat, "C": res.C,
               "mean_lice": None if math.isnan(mean) else mean, "identified_rows": k,
               "compliers": int(np.sum(res.compliance == ivmod.COMPLIER)),
               "defiers": int(np.sum(res.compliance == ivmod.DEFIER)),
               "noncompliers": int(np.sum(res.compliance == ivmod.NONCOMPLIER)),
               "lambda_hat": res.lambda_hat, "w_max": res.w_max, "sigma_hat": res.sigma_hat}
    if args.summary:
        with open(args.summary, "w") as fh:
            json.dump(summary, fh, indent=1, sort_keys=True)
    if args.model:
        persist.save(args.model, "iv", {"first": res.first_stage, "second": res.second_stage},
                     persist.config_to_dict(cfg), {"outcome": args.outcome, "treatment": args.treatment,
                                                   "instrument": args.instrument, "covariates": covs},
                     args.seed, ds.values)
    print(json.dumps(summary))
    return EXIT_OK


def cmd_mediate(args) -> int:
    ds = Dataset.read(args.data)
    y, t, m = ds.col(args.outcome), ds.col(args.treatment), ds.col(args.mediator)
    covs = _covariates(ds, args.covariates, [args.outcome, args.treatment, args.mediator])
    pre_names = _names(args.pre)
    if pre_names is None:
        pre = list(range(len(covs)))
    else:
        missing = [c for c in pre_names if c not in covs]
        if missing:
            raise UsageError(f"--pre names not among covariates: {', '.join(missing)}")
        pre = [covs.index(c) for c in pre_names]
    cfg = _config(args)
    res = medmod.fit_mediation(y, m, t, ds.cols(covs) if covs else None, cfg, pre)
    write_csv(args.out, medmod.table(res))
    if args.model:
        persist.save(args.model, "mediation", {"y": res.y_model, "m": res.m_model}, persist.config_to_dict(cfg),
                     {"outcome": args.outcome, "treatment": args.treatment, "mediator": args.mediator,
                      "covariates": covs, "pre": [covs[i] for i in pre]}, args.seed, ds.values)
    print(json.dumps({k: float(np.mean(v)) for k, v in medmod.table(res).items()}))
    return EXIT_OK


def cmd_simulate(args) -> int:
    d = simlab.generate(simlab.SimSpec(args.setting, args.n, args.p, args.seed))
    cols = {"y": d.y, "t": d.t}
    if d.z is not None:
        cols["z"] = d.z
    for j in range(d.X.shape[1]):
        cols[f"X{j + 1}"] = d.X[:, j]
    cols["mu"], cols["dmu_dt"] = d.mu, d.dmu_dt
    if d.dt_dz is not None:
        cols["dt_dz"] = d.dt_dz
    write_csv(args.out, cols, row_id=False)
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.grid:
        grid = simlab.read_grid(args.grid)
    else:
        grid = [(s, n, p) for s in _names(args.settings) for n in map(int, _names(args.n))
                for p in map(int, _names(args.p))]
    for s, n, p in grid:
        simlab.SimSpec(s, n, p)
    methods = tuple(_names(args.methods))
    rows = simlab.run_benchmark(grid, methods, args.reps, args.seed, args.out)
    failed = sum(1 for r in rows if r["error"])
    print(json.dumps({"cells": len(rows), "failed": failed, "out": args.out}))
    return EXIT_OK


# ------------------------------------------------------------------ parser

def _common(p, delta_default=1e-5):
    p.add_argument("--data", required=True)
    p.add_argument("--outcome", required=True)
    p.add_argument("--treatment", required=True)
    p.add_argument("--covariates", help="comma-separated names (default: all remaining columns)")
    p.add_argument("--delta", type=float, default=delta_default)
    p.add_argument("--screen-k", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mde", description="Sparse tensor-spline causal effect estimation.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a treatment model and write per-row effects")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--effects")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("effects", help="effects from a saved model, optionally bagged")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bags", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.10)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_effects)

    p = sub.add_parser("iv", help="instrumental-variables effects and compliance")
    _common(p)
    p.add_argument("--instrument", required=True)
    p.add_argument("--threshold-c", type=float, default=2.0)
    p.add_argument("--bags", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--summary")
    p.add_argument("--model")
    p.set_defaults(func=cmd_iv)

    p = sub.add_parser("mediate", help="total, direct and mediated effects")
    _common(p)
    p.add_argument("--mediator", required=True)
    p.add_argument("--pre", help="comma-separated pre-treatment covariates (default: all)")
    p.add_argument("--out", required=True)
    p.add_argument("--model")
    p.set_defaults(func=cmd_mediate)

    p = sub.add_parser("simulate", help="draw one simulated data set")
    p.add_argument("--setting", required=True, choices=simlab.SETTINGS)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--p", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="simulation benchmark to a long CSV table")
    p.add_argument("--grid", help="key=value grid file")
    p.add_argument("--settings", default="linear")
    p.add_argument("--n", default="500")
    p.add_argument("--p", default="10")
    p.add_argument("--methods", default="mde,ols,null")
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)
    return ap


def _diagnostics_path(args) -> str:
    for attr in ("out", "model", "effects"):
        v = getattr(args, attr, None)
        if v:
            return f"{v}.diagnostics.json"
    return "mde.diagnostics.json"


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return args.func(args)
    # LinAlgError subclasses ValueError, so numerical failures are matched first
    except (QuadratureError, FloatingPointError, np.linalg.LinAlgError, RuntimeError, ArithmeticError) as exc:
        path = _diagnostics_path(args)
        with open(path, "w") as fh:
            json.dump({"command": args.command, "error": f"{type(exc).__name__}: {exc}",
                       "traceback": traceback.format_exc()}, fh, indent=1)
        print(f"mde {args.command}: numerical failure: {exc} (diagnostics in {path})", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, persist.ModelFileError, DomainError, ValueError, KeyError) as exc:
        print(f"mde {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
