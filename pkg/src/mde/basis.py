"""Treatment and covariate spline bases and their tensor products.

Every basis function is stored symbolically (variable id, family, degree,
knots, center) so that a fitted model can be re-evaluated at arbitrary
points and written to disk without keeping any training data.

Variables are addressed by column index into a row vector ``v``.  In the
plain treatment model ``v = [t, x_1, ..., x_p]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

BSPLINE = "bspline"
HINGE = "truncated_power_deg2"
INTERCEPT = "intercept"
IDENTITY = "identity"
INDICATOR = "indicator"

COVARIATE_DEGREES = (3, 5, 7, 9)
N_TREAT_KNOTS = 14
MIN_SUPPORT = 3


class DomainError(ValueError):
    """Raised for inputs outside an operation's domain."""


@dataclass(frozen=True)
class KnotVector:
    interior: tuple[float, ...]
    boundary_low: float
    boundary_high: float

    def __post_init__(self):
        inner = np.asarray(self.interior, dtype=float)
        if inner.size and (np.any(np.diff(inner) < 0)
                           or inner[0] < self.boundary_low
                           or inner[-1] > self.boundary_high):
            raise DomainError("knots must be non-decreasing and inside the boundary")
        if self.boundary_low > self.boundary_high:
            raise DomainError("boundary_low exceeds boundary_high")

    def full(self, degree: int) -> np.ndarray:
        """Clamped knot sequence: boundaries repeated degree+1 times."""
        return np.concatenate([
            np.full(degree + 1, self.boundary_low),
            np.asarray(self.interior, dtype=float),
            np.full(degree + 1, self.boundary_high),
        ])

    def n_basis(self, degree: int) -> int:
        return len(self.interior) + degree + 1


@dataclass(frozen=True)
class BasisFactor:
    variable: int
    family: str
    degree: int = 0
    knots: KnotVector | None = None
    index: int = -1
    knot: float = 0.0
    center: float = 0.0

    def __post_init__(self):
        if self.family == INTERCEPT and (self.degree != 0 or self.knots is not None):
            raise DomainError("intercept factor has degree 0 and no knots")


@dataclass(frozen=True)
class BasisDescriptor:
    """One tensor-product column: product of centered factors, re-centered."""
    factors: tuple[BasisFactor, ...]
    center: float = 0.0

    @property
    def variables(self) -> tuple[int, ...]:
        return tuple(f.variable for f in self.factors)


# ---------------------------------------------------------------- evaluation

def bspline_eval(x: float, knots: KnotVector, degree: int, index: int) -> float:
    """Scalar Cox-de Boor recursion for basis ``index`` on clamped knots.

    Zero outside [boundary_low, boundary_high]; the right boundary is closed.
    """
    if degree < 0:
        raise DomainError("degree must be >= 0")
    t = knots.full(degree)
    nb = len(t) - degree - 1
    if not 0 <= index < nb:
        raise DomainError(f"index {index} invalid for {nb} basis functions")
    if t[index + degree + 1] <= t[index]:
        raise DomainError("degenerate knot span")
    if x < t[0] or x > t[-1]:
        return 0.0
    # last non-empty span is closed on the right
    last = int(np.nonzero(t[:-1] < t[1:])[0][-1])

    def rec(i: int, p: int) -> float:
        if p == 0:
            if t[i] <= x < t[i + 1]:
                return 1.0
            return 1.0 if (i == last and x == t[i + 1]) else 0.0
        out = 0.0
        d1 = t[i + p] - t[i]
        if d1 > 0:
            out += (x - t[i]) / d1 * rec(i, p - 1)
        d2 = t[i + p + 1] - t[i + 1]
        if d2 > 0:
            out += (t[i + p + 1] - x) / d2 * rec(i + 1, p - 1)
        return out

    return float(rec(index, degree))


def bspline_matrix(x: np.ndarray, knots: KnotVector, degree: int) -> np.ndarray:
    """All clamped B-splines at ``x`` (n x n_basis), vectorised.

    Uses the triangular de Boor scheme on the span containing x; points
    outside the boundary use the outermost span, which extends its
    polynomial piece.
    """
    x = np.asarray(x, dtype=float)
    t = knots.full(degree)
    nb = len(t) - degree - 1
    mu = np.clip(np.searchsorted(t, x, side="right") - 1, degree, nb - 1)
    n = x.shape[0]
    N = np.zeros((n, degree + 1))
    N[:, 0] = 1.0
    left = np.zeros((n, degree + 1))
    right = np.zeros((n, degree + 1))
    for j in range(1, degree + 1):
        left[:, j] = x - t[mu + 1 - j]
        right[:, j] = t[mu + j] - x
        saved = np.zeros(n)
        for r in range(j):
            temp = N[:, r] / (right[:, r + 1] + left[:, j - r])
            N[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        N[:, j] = saved
    out = np.zeros((n, nb))
    rows = np.arange(n)
    for r in range(degree + 1):
        out[rows, mu - degree + r] = N[:, r]
    return out


def truncated_power2_eval(t, knot: float):
    """Hinge max(t - knot, 0); works on scalars and arrays."""
    if np.ndim(t) == 0:
        return max(float(t) - knot, 0.0)
    return np.maximum(np.asarray(t, dtype=float) - knot, 0.0)


def raw_factor_values(f: BasisFactor, v: np.ndarray, cache: dict | None = None) -> np.ndarray:
    """Un-centered values of factor ``f`` at the variable column ``v``."""
    if f.family == INTERCEPT:
        return np.ones_like(v, dtype=float)
    if f.family == HINGE:
        return np.maximum(v - f.knot, 0.0)
    if f.family == IDENTITY:
        return np.asarray(v, dtype=float).copy()
    if f.family == INDICATOR:
        return (v == f.knot).astype(float)
    if f.family == BSPLINE:
        key = (f.variable, f.degree, f.knots)
        if cache is not None and key in cache:
            mat = cache[key]
        else:
            mat = bspline_matrix(v, f.knots, f.degree)
            if cache is not None:
                cache[key] = mat
        return mat[:, f.index]
    raise DomainError(f"unknown family {f.family!r}")


def factor_values(f: BasisFactor, v: np.ndarray, cache: dict | None = None) -> np.ndarray:
    return raw_factor_values(f, v, cache) - f.center


def descriptor_columns(descs: Sequence[BasisDescriptor], V: np.ndarray) -> np.ndarray:
    """Evaluate many descriptors on the rows of V (n x q) -> n x K matrix."""
    V = np.atleast_2d(np.asarray(V, dtype=float))
    n = V.shape[0]
    spline_cache: dict = {}
    fcache: dict = {}
    out = np.empty((n, len(descs)))
    for k, d in enumerate(descs):
        col = None
        for f in d.factors:
            if f.variable >= V.shape[1]:
                raise DomainError(f"variable {f.variable} missing from input")
            vals = fcache.get(f)
            if vals is None:
                vals = factor_values(f, V[:, f.variable], spline_cache)
                fcache[f] = vals
            col = vals if col is None else col * vals
        out[:, k] = (np.ones(n) if col is None else col) - d.center
    return out


def eval_descriptor(d: BasisDescriptor, t: float, x: Sequence[float]) -> float:
    """Value of one descriptor at a single point, v = [t, *x]."""
    v = np.concatenate([[t], np.asarray(x, dtype=float)])[None, :]
    return float(descriptor_columns([d], v)[0, 0])


# ------------------------------------------------------------- construction

def _quantile_knots(col: np.ndarray, probs: np.ndarray) -> np.ndarray:
    lo, hi = col.min(), col.max()
    q = np.unique(np.quantile(col, probs))  # type-7 quantiles
    return q[(q > lo) & (q < hi)]


def _central_bsplines(col: np.ndarray, variable: int, degree: int, n_knots: int) -> list[BasisFactor]:
    """The B-splines of a clamped family that sit over the interior knots."""
    probs = np.arange(1, n_knots + 1) / (n_knots + 1)
    interior = _quantile_knots(col, probs)
    kv = KnotVector(tuple(float(k) for k in interior), float(col.min()), float(col.max()))
    mat = bspline_matrix(col, kv, degree)
    off = (degree + 1) // 2
    out = []
    for idx in range(off, off + len(interior)):
        vals = mat[:, idx]
        if np.count_nonzero(vals > 0) < MIN_SUPPORT:
            continue
        out.append(BasisFactor(variable, BSPLINE, degree, kv, idx, 0.0, float(vals.mean())))
    return out


def make_covariate_bases(column, variable: int = 1) -> list[BasisFactor]:
    """k centered B-splines of degree k for k in {3, 5, 7, 9}."""
    col = np.asarray(column, dtype=float)
    if col.ndim != 1 or col.size < 10:
        raise DomainError("need a vector of at least 10 values")
    if not np.all(np.isfinite(col)):
        raise DomainError("column has non-finite values")
    if col.min() == col.max():
        return []
    out = []
    for k in COVARIATE_DEGREES:
        out.extend(_central_bsplines(col, variable, k, k))
    return out


def treatment_kind(t) -> str:
    levels = np.unique(np.asarray(t, dtype=float))
    if levels.size < 2:
        return "constant"
    if levels.size == 2:
        return "binary"
    if levels.size < N_TREAT_KNOTS + 1:
        return "discrete"
    return "continuous"


def make_treatment_bases(t, variable: int = 0) -> list[BasisFactor]:
    """14 hinges and 14 quadratic B-splines at every 100/15-th percentile.

    Binary treatment (values {0, 1}) yields the raw indicator only; a
    treatment with fewer than 15 levels yields the raw value plus one
    indicator per non-baseline level.
    """
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)):
        raise DomainError("treatment has non-finite values")
    kind = treatment_kind(t)
    if kind == "constant":
        raise DomainError("treatment is constant")
    if kind == "binary":
        if set(np.unique(t)) != {0.0, 1.0}:
            raise DomainError("binary treatment must be coded 0/1")
        return [BasisFactor(variable, IDENTITY, 1, center=float(t.mean()))]
    if kind == "discrete":
        levels = np.unique(t)
        out = [BasisFactor(variable, IDENTITY, 1, center=float(t.mean()))]
        for lev in levels[1:]:
            ind = (t == lev).astype(float)
            out.append(BasisFactor(variable, INDICATOR, 0, knot=float(lev), center=float(ind.mean())))
        return out
    probs = np.arange(1, N_TREAT_KNOTS + 1) / (N_TREAT_KNOTS + 1)
    out = []
    for kn in _quantile_knots(t, probs):
        vals = np.maximum(t - kn, 0.0)
        if np.count_nonzero(vals > 0) < MIN_SUPPORT:
            continue
        out.append(BasisFactor(variable, HINGE, 2, knot=float(kn), center=float(vals.mean())))
    out.extend(_central_bsplines(t, variable, 2, N_TREAT_KNOTS))
    return out


def candidate_count(p: int, n_treat_bases: int = 28, n_cov_bases: int = 24) -> int:
    """Upper bound on the number of tensor candidates (exact integer)."""
    if p < 0:
        raise DomainError("p must be >= 0")
    m = 1 + int(n_cov_bases) * int(p)
    return (1 + int(n_treat_bases)) * m * m


# ----------------------------------------------------------------- streaming

@dataclass
class TensorLayout:
    """Slots of the tensor stream: focus factors and flattened covariate factors."""
    focus: list[BasisFactor]
    covariates: list[BasisFactor] = field(default_factory=list)

    @classmethod
    def build(cls, focus_factors, cov_factors_by_var) -> "TensorLayout":
        flat = [f for fs in cov_factors_by_var for f in fs]
        return cls(list(focus_factors), flat)

    def focus_order(self) -> list[int]:
        """Focus slot order: every treatment factor first, then the intercept (-1)."""
        return list(range(len(self.focus))) + [-1]

    def n_candidates(self) -> int:
        m = 1 + len(self.covariates)
        return (len(self.focus) + 1) * m * (m + 1) // 2 - 1

    def descriptor(self, a: int, j: int, k: int, center: float = 0.0) -> BasisDescriptor:
        """a indexes focus (-1 intercept); j <= k index 1 + covariates (0 intercept)."""
        fs = []
        if a >= 0:
            fs.append(self.focus[a])
        if j > 0:
            fs.append(self.covariates[j - 1])
        if k > 0:
            fs.append(self.covariates[k - 1])
        return BasisDescriptor(tuple(fs), center)

    def iter_triples(self) -> Iterator[tuple[int, int, int]]:
        m = 1 + len(self.covariates)
        for a in self.focus_order():
            for j in range(m):
                for k in range(j, m):
                    if a < 0 and j == 0 and k == 0:
                        continue
                    yield a, j, k


def tensor_stream(treat_factors, cov_factors_by_var, visitor: Callable[[BasisDescriptor], None]) -> int:
    """Call ``visitor`` once per admissible (uncentered) descriptor; returns the count."""
    layout = TensorLayout.build(treat_factors, cov_factors_by_var)
    count = 0
    for a, j, k in layout.iter_triples():
        visitor(layout.descriptor(a, j, k))
        count += 1
    return count
