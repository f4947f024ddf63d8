"""Marginal-correlation screening of streamed candidate columns.

Keeps the K candidates with the largest absolute Pearson correlation with
the outcome.  Ties go to the earlier enumeration index.  Only retained
columns plus one chunk are ever held in memory.
"""
from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .basis import BasisDescriptor, TensorLayout, factor_values


def screen_size(n: int) -> int:
    if n < 1:
        raise ValueError("n must be >= 1")
    return int(math.floor(100 * (1 + n ** 0.2) + 1e-9))


@dataclass
class ScreenedDesign:
    columns: np.ndarray
    descriptors: list
    correlations: np.ndarray
    y_mean: float
    column_norms: np.ndarray
    status: str = "ok"
    peak_columns: int = 0

    @property
    def K(self) -> int:
        return self.columns.shape[1]


@dataclass
class Chunk:
    """Candidates with consecutive global indices and a lazy column getter."""
    start: int
    scores: np.ndarray                      # signed correlations, 0 for constants
    descriptor: Callable[[int], object]     # local index -> descriptor
    column: Callable[[int], np.ndarray]     # local index -> centered column
    constant: np.ndarray | None = None      # mask of constant candidates


@dataclass
class TopK:
    """Partial screening result; mergeable across disjoint candidate ranges."""
    K: int
    index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    corr: np.ndarray = field(default_factory=lambda: np.zeros(0))
    columns: list = field(default_factory=list)
    descriptors: list = field(default_factory=list)
    peak_columns: int = 0

    def threshold(self) -> float:
        if len(self.index) < self.K:
            return -1.0
        return float(np.abs(self.corr).min())

    def push(self, chunk: Chunk) -> None:
        """Admit candidates of one chunk, materialising at most K columns at a time."""
        score = np.abs(chunk.scores)
        ok = score > 0
        if chunk.constant is not None:
            ok &= ~chunk.constant
        cand = np.nonzero(ok)[0]
        cand = cand[np.lexsort((cand, -score[cand]))]
        pos = 0
        while pos < cand.size:
            thr = self.threshold()
            # later chunks carry larger indices, so ties never displace
            if thr >= 0 and score[cand[pos]] <= thr:
                break
            batch = cand[pos:pos + self.K]
            if thr >= 0:
                batch = batch[score[batch] > thr]
            pos += self.K
            cols, keep = [], []
            for i in batch:
                col = chunk.column(int(i))
                if np.ptp(col) == 0:
                    continue
                cols.append(col)
                keep.append(int(i))
            self.peak_columns = max(self.peak_columns, len(self.columns) + len(cols))
            if not keep:
                continue
            keep = np.asarray(keep, dtype=np.int64)
            other = TopK(self.K, chunk.start + keep, chunk.scores[keep], cols,
                         [chunk.descriptor(int(i)) for i in keep])
            merged = merge_topk(self, other, self.K)
            self.index, self.corr = merged.index, merged.corr
            self.columns, self.descriptors = merged.columns, merged.descriptors


def _digest(col: np.ndarray) -> bytes:
    return hashlib.blake2b(np.ascontiguousarray(col).tobytes(), digest_size=16).digest()


def merge_topk(a: TopK, b: TopK, K: int | None = None) -> TopK:
    """Merge two partials built on disjoint index ranges (commutative, associative)."""
    K = a.K if K is None else K
    idx = np.concatenate([a.index, b.index])
    corr = np.concatenate([a.corr, b.corr])
    cols = a.columns + b.columns
    descs = a.descriptors + b.descriptors
    order = np.lexsort((idx, -np.abs(corr)))
    keep, seen = [], set()
    for i in order:
        h = _digest(cols[i])
        if h in seen:
            continue
        seen.add(h)
        keep.append(i)
        if len(keep) == K:
            break
    out = TopK(K, idx[keep], corr[keep], [cols[i] for i in keep], [descs[i] for i in keep])
    out.peak_columns = max(a.peak_columns, b.peak_columns, len(cols))
    return out


def pearson_scores(cols: np.ndarray, yc: np.ndarray):
    """Signed correlations of each column with centered y; constants score 0."""
    cc = cols - cols.mean(axis=0)
    ss = np.einsum("ij,ij->j", cc, cc)
    constant = np.ptp(cols, axis=0) == 0
    denom = np.sqrt(ss) * np.linalg.norm(yc)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(constant | (denom == 0), 0.0, cc.T @ yc / denom)
    return r, constant


def column_chunks(columns: np.ndarray, chunk: int, descriptors: Sequence | None = None):
    """Wrap an explicit n x N candidate matrix as a stream of chunks of raw columns."""
    N = columns.shape[1]
    for s in range(0, N, chunk):
        block = columns[:, s:s + chunk]
        yield s, block, (descriptors[s:s + chunk] if descriptors is not None else list(range(s, s + block.shape[1])))


def screen(candidate_stream: Iterable, y, K: int) -> ScreenedDesign:
    """Screen a stream of ``(start, columns, descriptors)`` blocks or Chunk objects."""
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)) or np.ptp(y) == 0:
        raise ValueError("y must be finite and non-constant")
    yc = y - y.mean()
    top = TopK(K)
    for item in candidate_stream:
        if isinstance(item, Chunk):
            top.push(item)
            continue
        start, block, descs = item
        r, const = pearson_scores(block, yc)
        top.push(Chunk(start, r, lambda i, d=descs: d[i],
                       lambda i, b=block: b[:, i] - b[:, i].mean(), const))
    return _finish(top, y)


def _finish(top: TopK, y: np.ndarray) -> ScreenedDesign:
    n = y.shape[0]
    if not top.columns:
        warnings.warn("screen retained no columns: all candidates constant")
        return ScreenedDesign(np.zeros((n, 0)), [], np.zeros(0), float(y.mean()), np.zeros(0), "empty")
    cols = np.column_stack(top.columns)
    return ScreenedDesign(cols, list(top.descriptors), np.asarray(top.corr, dtype=float),
                          float(y.mean()), np.linalg.norm(cols, axis=0), "ok", top.peak_columns)


# ------------------------------------------------------------ tensor fast path

def tensor_screen(layout: TensorLayout, V: np.ndarray, y, K: int) -> ScreenedDesign:
    """Screen the full tensor stream without materialising it.

    For each focus factor a, correlations of all columns A*F_j*F_k (j <= k)
    follow from three Gram products of the covariate factor matrix F, so
    only admitted candidates are ever built as columns.
    """
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)) or np.ptp(y) == 0:
        raise ValueError("y must be finite and non-constant")
    n = y.shape[0]
    yc = y - y.mean()
    ynorm = np.linalg.norm(yc)
    cache: dict = {}
    F = np.ones((n, 1 + len(layout.covariates)))
    for j, f in enumerate(layout.covariates):
        F[:, j + 1] = factor_values(f, V[:, f.variable], cache)
    A = {-1: np.ones(n)}
    for a, f in enumerate(layout.focus):
        A[a] = factor_values(f, V[:, f.variable], cache)
    m = F.shape[1]
    iu, ju = np.triu_indices(m)
    F2 = F * F
    top = TopK(K)
    start = 0
    for a in layout.focus_order():
        G = F * A[a][:, None]
        s1 = (F.T @ G)[iu, ju] / n
        sy = (F.T @ (G * yc[:, None]))[iu, ju]
        s2 = (F2.T @ (G * G))[iu, ju] / n
        var = s2 - s1 * s1
        scale = np.maximum(s2, 1e-300)
        usable = var > 1e-12 * scale
        with np.errstate(invalid="ignore", divide="ignore"):
            r = np.where(usable, sy / (np.sqrt(np.where(usable, var, 1.0) * n) * ynorm), 0.0)
        jj, kk = iu, ju
        if a < 0:                      # drop the all-intercept triple
            r, jj, kk, usable = r[1:], jj[1:], kk[1:], usable[1:]

        def column(i, a=a, jj=jj, kk=kk):
            col = A[a] * F[:, jj[i]] * F[:, kk[i]]
            return col - col.mean()

        def descriptor(i, a=a, jj=jj, kk=kk):
            col = A[a] * F[:, jj[i]] * F[:, kk[i]]
            return layout.descriptor(a, int(jj[i]), int(kk[i]), float(col.mean()))

        top.push(Chunk(start, r, descriptor, column, ~usable))
        start += r.shape[0]
    return _finish(top, y)


def brute_force_topk(columns: np.ndarray, y, K: int) -> np.ndarray:
    """Oracle: indices of the top-K by |corr| after a full sort, ties by index."""
    yc = np.asarray(y, dtype=float) - np.mean(y)
    r, const = pearson_scores(columns, yc)
    score = np.where(const, 0.0, np.abs(r))
    order = np.lexsort((np.arange(len(score)), -score))
    order = [i for i in order if score[i] > 0]
    keep, seen = [], set()
    for i in order:
        c = columns[:, i] - columns[:, i].mean()
        h = _digest(c)
        if h in seen:
            continue
        seen.add(h)
        keep.append(i)
        if len(keep) == K:
            break
    return np.array(keep, dtype=np.int64)
