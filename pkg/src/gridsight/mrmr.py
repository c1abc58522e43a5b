"""Plug-in mutual information on equal-width bins and greedy mRMR selection.

The greedy step uses the difference form (relevance minus mean redundancy).
Two thresholds shape the search: features whose class relevance falls below
``t_mi`` are removed up front, and a candidate whose absolute Pearson
correlation with any already-selected feature exceeds ``t_corr`` is gated out.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, InsufficientData, InvalidParameter

# scores closer than this are treated as tied and resolved by lower index
TIE_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class DiscreteColumn:
    values: np.ndarray
    bin_edges: np.ndarray

    @property
    def bins(self) -> int:
        return len(self.bin_edges) - 1


@dataclass
class SelectionResult:
    selected: list[int] = field(default_factory=list)
    scores: list[float] = field(default_factory=list)
    dropped_relevance: list[int] = field(default_factory=list)
    dropped_correlation: list[int] = field(default_factory=list)
    relevance: np.ndarray | None = None


def _bin_values(X: np.ndarray, B: int) -> np.ndarray:
    # column-wise equal-width binning of a 2-D array
    lo = X.min(axis=0)
    span = X.max(axis=0) - lo
    safe = np.where(span > 0, span, 1.0)
    b = np.floor((X - lo) / safe * B).astype(np.int64)
    b = np.clip(b, 0, B - 1)
    return np.where(span > 0, b, 0)


def discretize_column(values, B: int = 8) -> DiscreteColumn:
    """Equal-width bins over ``[min, max]``; the maximum falls in bin ``B - 1``."""
    if B < 2:
        raise InvalidParameter(f"bin count must be >= 2, got {B}")
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise InvalidParameter("discretize_column expects a non-empty 1-D sequence")
    edges = np.linspace(v.min(), v.max(), B + 1)
    return DiscreteColumn(_bin_values(v[:, None], B)[:, 0], edges)


def _codes(x) -> tuple[np.ndarray, int]:
    if isinstance(x, DiscreteColumn):
        return x.values, x.bins
    v = np.asarray(x, dtype=np.int64)
    return v, int(v.max()) + 1 if v.size else 1


def _mi_from_counts(joint: np.ndarray) -> float:
    # fsum is order independent, so I(x; y) and I(y; x) agree bit for bit
    n = joint.sum()
    cx = joint.sum(axis=1)
    cy = joint.sum(axis=0)
    a, b = np.nonzero(joint)
    c = joint[a, b]
    terms = c / n * np.log2(c * n / (cx[a] * cy[b]))
    return max(math.fsum(terms.tolist()), 0.0)


def mutual_information_from_joint(joint) -> float:
    """Plug-in MI in bits of a joint frequency (or count) table."""
    return _mi_from_counts(np.asarray(joint, dtype=np.float64))


def mutual_information(x, y) -> float:
    """Plug-in estimate of I(x; y) in bits for two discrete columns."""
    xv, bx = _codes(x)
    yv, by = _codes(y)
    if xv.shape != yv.shape:
        raise DimensionMismatch(f"columns differ in length: {xv.shape[0]} vs {yv.shape[0]}")
    joint = np.bincount(xv * by + yv, minlength=bx * by).reshape(bx, by)
    return _mi_from_counts(joint.astype(np.float64))


def entropy(x) -> float:
    xv, bx = _codes(x)
    p = np.bincount(xv, minlength=bx) / xv.size
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum()) + 0.0


def _mi_columns(Xd: np.ndarray, bx: int, y: np.ndarray, by: int) -> np.ndarray:
    """MI between every column of ``Xd`` and the single code vector ``y``."""
    n, d = Xd.shape
    flat = (np.arange(d)[None, :] * bx + Xd) * by + y[:, None]
    joint = np.bincount(flat.ravel(), minlength=d * bx * by).reshape(d, bx, by) / n
    px = joint.sum(axis=2, keepdims=True)
    py = joint.sum(axis=1, keepdims=True)
    denom = px * py
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(joint > 0, joint * np.log2(joint / np.where(denom > 0, denom, 1.0)), 0.0)
    return np.maximum(terms.sum(axis=(1, 2)), 0.0)


def pearson_correlation(x, y) -> float:
    """Pearson r; defined as 0 when either input is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionMismatch(f"inputs differ in length: {x.shape} vs {y.shape}")
    if x.size < 2:
        raise DimensionMismatch("correlation needs at least 2 samples")
    return float(_corr_columns(x[:, None], y)[0])


def _corr_columns(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    xc = X - X.mean(axis=0)
    yc = y - y.mean()
    sx = np.sqrt((xc * xc).sum(axis=0))
    sy = np.sqrt((yc * yc).sum())
    ok = (sx > 0) & (sy > 0)
    r = np.zeros(X.shape[1])
    r[ok] = (xc[:, ok] * yc[:, None]).sum(axis=0) / (sx[ok] * sy)
    return np.clip(r, -1.0, 1.0)


def _argmax_low(scores: np.ndarray, candidates: np.ndarray) -> int:
    best = scores[candidates].max()
    return int(candidates[np.flatnonzero(scores[candidates] >= best - TIE_EPS)[0]])


def mrmr_select(X, y, k: int, t_mi: float = 0.01, t_corr: float = 0.95, B: int = 8) -> SelectionResult:
    """Greedy mRMR over the columns of ``X`` against class codes ``y``.

    ``X`` may also be a :class:`~gridsight.synth.TrainingSet`, in which case
    ``y`` is ignored and its class targets are used.
    """
    if hasattr(X, "targets"):
        X, y = X.X, X.targets()
    if k < 1:
        raise InvalidParameter(f"k must be >= 1, got {k}")
    X = np.asarray(X, dtype=np.float64)
    y = np.unique(np.asarray(y), return_inverse=True)[1].astype(np.int64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"X has shape {X.shape} but there are {y.shape[0]} labels")
    if B < 2:
        raise InvalidParameter(f"bin count must be >= 2, got {B}")

    Xd = _bin_values(X, B)
    ny = int(y.max()) + 1
    relevance = _mi_columns(Xd, B, y, ny)
    result = SelectionResult(relevance=relevance)
    result.dropped_relevance = np.flatnonzero(relevance < t_mi).tolist()
    pool = np.flatnonzero(relevance >= t_mi)
    if pool.size == 0:
        raise InsufficientData(f"no feature reaches the relevance threshold {t_mi} bits")

    redundancy = np.zeros(X.shape[1])
    open_ = np.zeros(X.shape[1], dtype=bool)
    open_[pool] = True
    pick = _argmax_low(relevance, pool)
    score = relevance[pick]
    while True:
        result.selected.append(pick)
        result.scores.append(float(score))
        open_[pick] = False
        if len(result.selected) >= k:
            break
        cand = np.flatnonzero(open_)
        if cand.size == 0:
            break
        corr = np.abs(_corr_columns(X[:, cand], X[:, pick]))
        gated = cand[corr > t_corr]
        result.dropped_correlation.extend(gated.tolist())
        open_[gated] = False
        cand = np.flatnonzero(open_)
        if cand.size == 0:
            break
        redundancy[cand] += _mi_columns(Xd[:, cand], B, Xd[:, pick], B)
        mid = relevance - redundancy / len(result.selected)
        pick = _argmax_low(mid, cand)
        score = mid[pick]
    return result
