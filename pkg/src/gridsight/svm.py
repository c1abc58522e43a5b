"""RBF-kernel SVMs trained by SMO, Platt-calibrated, combined one-vs-rest.

The dual problem solved for each binary machine is::

    min_a  1/2 a'Qa - e'a   s.t.  y'a = 0,  0 <= a_i <= C,
    Q_ij = y_i y_j exp(-gamma |x_i - x_j|^2)

Each iteration picks the maximal violating pair and updates it analytically.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionMismatch, EmptyModel, FormatError, InvalidInput, NonConvergence
from .imagecore import GridSpec
from .mrmr import mrmr_select
from .synth import FeatureLayout, Scaler, TrainingSet, apply_scaler, fit_scaler

FORMAT = "grid-sight-model/1"
TAU = 1e-12


def rbf_kernel(x, y, gamma: float) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionMismatch(f"kernel inputs differ in shape: {x.shape} vs {y.shape}")
    if gamma <= 0:
        raise InvalidInput(f"gamma must be positive, got {gamma}")
    d = x - y
    return math.exp(-gamma * float(d @ d))


def rbf_matrix(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    """Kernel values between the rows of ``A`` and ``B``."""
    aa = (A * A).sum(axis=1)[:, None]
    bb = (B * B).sum(axis=1)[None, :]
    d2 = np.maximum(aa + bb - 2.0 * (A @ B.T), 0.0)
    return np.exp(-gamma * d2)


@dataclass(frozen=True, eq=False)
class BinarySvm:
    support_vectors: np.ndarray
    alphas: np.ndarray
    labels: np.ndarray
    bias: float
    gamma: float
    C: float
    A: float | None = None
    B: float | None = None
    iterations: int = 0

    def decision_values(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if len(self.alphas) == 0:
            raise EmptyModel("model has no support vectors")
        if X.shape[1] != self.support_vectors.shape[1]:
            raise DimensionMismatch(
                f"input has {X.shape[1]} features, model expects {self.support_vectors.shape[1]}")
        K = rbf_matrix(X, self.support_vectors, self.gamma)
        return K @ (self.alphas * self.labels) + self.bias

    def probability(self, f) -> np.ndarray:
        """Calibrated P(y = +1 | f)."""
        if self.A is None:
            raise EmptyModel("model is not calibrated")
        return _sigmoid_neg(self.A * np.asarray(f, dtype=np.float64) + self.B)

    def dual_objective(self) -> float:
        ay = self.alphas * self.labels
        K = rbf_matrix(self.support_vectors, self.support_vectors, self.gamma)
        return float(self.alphas.sum() - 0.5 * ay @ K @ ay)


def decision_value(m: BinarySvm, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatch("decision_value expects a single vector")
    return float(m.decision_values(x[None, :])[0])


class _KernelRows:
    """Kernel rows computed on demand, keeping at most ``capacity`` in memory."""

    def __init__(self, X: np.ndarray, gamma: float, capacity: int):
        self.X = X
        self.sq = (X * X).sum(axis=1)
        self.gamma = gamma
        self.capacity = max(2, capacity)
        self.rows: dict[int, np.ndarray] = {}

    def __call__(self, i: int) -> np.ndarray:
        row = self.rows.get(i)
        if row is None:
            d2 = np.maximum(self.sq + self.sq[i] - 2.0 * (self.X @ self.X[i]), 0.0)
            row = np.exp(-self.gamma * d2)
            if len(self.rows) >= self.capacity:
                self.rows.pop(next(iter(self.rows)))
            self.rows[i] = row
        return row


def smo_train(X, y, C: float = 10.0, gamma: float | None = None, tol: float = 1e-3,
              max_iter: int | None = None, cache_rows: int = 4000) -> BinarySvm:
    """Train a soft-margin RBF SVM on rows ``X`` with labels ``y`` in {-1, +1}.

    Stops when the maximal KKT violation ``max_up(-yG) - min_low(-yG)`` drops
    below ``tol``. ``gamma`` defaults to ``1 / n_features``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"X has shape {X.shape} but there are {y.shape[0]} labels")
    if not np.isin(y, (-1.0, 1.0)).all():
        raise InvalidInput("labels must be -1 or +1")
    if not ((y > 0).any() and (y < 0).any()):
        raise InvalidInput("both labels must be present")
    if C <= 0 or tol <= 0:
        raise InvalidInput(f"C and tol must be positive, got C={C}, tol={tol}")
    if gamma is None:
        gamma = 1.0 / X.shape[1]
    if gamma <= 0:
        raise InvalidInput(f"gamma must be positive, got {gamma}")
    n = X.shape[0]
    if max_iter is None:
        max_iter = max(100_000, 100 * n)

    krow = _KernelRows(X, gamma, cache_rows)
    alpha = np.zeros(n)
    grad = -np.ones(n)
    pos = y > 0
    it = 0
    while True:
        v = -y * grad
        up = np.where(pos, alpha < C, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < C)
        vi = np.where(up, v, -np.inf)
        vj = np.where(low, v, np.inf)
        i = int(np.argmax(vi))
        j = int(np.argmin(vj))
        if vi[i] - vj[j] < tol:
            break
        if it >= max_iter:
            raise NonConvergence(f"SMO did not converge within {max_iter} iterations "
                                 f"(violation {vi[i] - vj[j]:.3g})")
        it += 1

        Ki, Kj = krow(i), krow(j)
        Qi = y[i] * y * Ki
        Qj = y[j] * y * Kj
        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = max(Ki[i] + Kj[j] + 2.0 * Qi[j], TAU)
            delta = (-grad[i] - grad[j]) / quad
            diff = ai - aj
            ni, nj = ai + delta, aj + delta
            if diff > 0:
                if nj < 0:
                    nj, ni = 0.0, diff
            elif ni < 0:
                ni, nj = 0.0, -diff
            if diff > 0:
                if ni > C:
                    ni, nj = C, C - diff
            elif nj > C:
                nj, ni = C, C + diff
        else:
            quad = max(Ki[i] + Kj[j] - 2.0 * Qi[j], TAU)
            delta = (grad[i] - grad[j]) / quad
            total = ai + aj
            ni, nj = ai - delta, aj + delta
            if total > C:
                if ni > C:
                    ni, nj = C, total - C
            elif nj < 0:
                nj, ni = 0.0, total
            if total > C:
                if nj > C:
                    nj, ni = C, total - C
            elif ni < 0:
                ni, nj = 0.0, total
        grad += Qi * (ni - ai) + Qj * (nj - aj)
        alpha[i], alpha[j] = ni, nj

    # offset from free vectors, else the midpoint of the feasible interval
    yg = y * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = float(yg[free].mean())
    else:
        at_ub = alpha >= C
        upper = np.where(at_ub, ~pos, pos)
        ub = yg[upper].min() if upper.any() else np.inf
        lb = yg[~upper].max() if (~upper).any() else -np.inf
        rho = float((ub + lb) / 2) if np.isfinite(ub) and np.isfinite(lb) else float(ub if np.isfinite(ub) else lb)
    sv = alpha > 0
    return BinarySvm(X[sv].copy(), alpha[sv].copy(), y[sv].copy(), -rho, float(gamma), float(C), iterations=it)


def _sigmoid_neg(z) -> np.ndarray:
    """1 / (1 + exp(z)) without overflow."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    big = z >= 0
    ez = np.exp(-z[big])
    out[big] = ez / (1.0 + ez)
    out[~big] = 1.0 / (1.0 + np.exp(z[~big]))
    return out


def _platt_objective(f, t, A, B) -> float:
    z = f * A + B
    return float(np.where(z >= 0, t * z + np.log1p(np.exp(-np.abs(z))),
                          (t - 1) * z + np.log1p(np.exp(-np.abs(z)))).sum())


def platt_fit(f, y, max_iter: int = 100) -> tuple[float, float]:
    """Fit ``P(y=+1|f) = 1 / (1 + exp(A f + B))`` by regularized likelihood.

    Targets are smoothed to ``(N+ + 1)/(N+ + 2)`` and ``1/(N- + 2)``; the fit is a
    Newton iteration with backtracking line search.
    """
    f = np.asarray(f, dtype=np.float64)
    y = np.asarray(y)
    if f.shape != y.shape:
        raise DimensionMismatch("decision values and labels differ in length")
    n_pos = int((y > 0).sum())
    n_neg = int((y <= 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise InvalidInput("Platt calibration needs both classes")
    t = np.where(y > 0, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))
    A, B = 0.0, math.log((n_neg + 1.0) / (n_pos + 1.0))
    fval = _platt_objective(f, t, A, B)
    sigma = 1e-12
    for _ in range(max_iter):
        p = _sigmoid_neg(f * A + B)
        d2 = p * (1.0 - p)
        h11 = sigma + (f * f * d2).sum()
        h22 = sigma + d2.sum()
        h21 = (f * d2).sum()
        d1 = t - p
        g1 = (f * d1).sum()
        g2 = d1.sum()
        if abs(g1) < 1e-5 and abs(g2) < 1e-5:
            break
        det = h11 * h22 - h21 * h21
        dA = -(h22 * g1 - h21 * g2) / det
        dB = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * dA + g2 * dB
        step = 1.0
        while step >= 1e-10:
            nA, nB = A + step * dA, B + step * dB
            nf = _platt_objective(f, t, nA, nB)
            if nf < fval + 1e-4 * step * gd:
                A, B, fval = nA, nB, nf
                break
            step /= 2.0
        else:
            break
    return float(A), float(B)


@dataclass(frozen=True, eq=False)
class SvmModelBundle:
    classes: tuple[str, ...]
    models: tuple[BinarySvm, ...]
    scaler: Scaler
    selected: np.ndarray
    layout: FeatureLayout
    grid: GridSpec
    format: str = FORMAT

    def decision_matrix(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.layout.total_dim:
            raise DimensionMismatch(f"input has {X.shape[1]} features, layout has {self.layout.total_dim}")
        Z = apply_scaler(X, self.scaler)[:, self.selected]
        return np.stack([m.decision_values(Z) for m in self.models], axis=1)

    def predict_proba(self, X) -> np.ndarray:
        """Normalized one-vs-rest probabilities, one row per input row."""
        F = self.decision_matrix(X)
        S = np.stack([m.probability(F[:, c]) for c, m in enumerate(self.models)], axis=1)
        total = S.sum(axis=1, keepdims=True)
        uniform = np.full_like(S, 1.0 / S.shape[1])
        return np.where(total > 0, S / np.where(total > 0, total, 1.0), uniform)

    def to_dict(self) -> dict:
        return {
            "format": self.format,
            "classes": list(self.classes),
            "layout": self.layout.to_dict(),
            "grid": {"stride": self.grid.stride, "radius": self.grid.radius, "origin": list(self.grid.origin)},
            "scaler": {"mean": self.scaler.mean.tolist(), "std": self.scaler.std.tolist()},
            "selected": [int(i) for i in self.selected],
            "calibration": "platt-on-training-decision-values",
            "models": [
                {"class": c, "gamma": m.gamma, "C": m.C, "bias": m.bias, "A": m.A, "B": m.B,
                 "alphas": m.alphas.tolist(), "labels": [int(v) for v in m.labels],
                 "support_vectors": m.support_vectors.tolist()}
                for c, m in zip(self.classes, self.models)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SvmModelBundle":
        if d.get("format") != FORMAT:
            raise FormatError(f"unsupported model format {d.get('format')!r}, expected {FORMAT!r}")
        try:
            layout = FeatureLayout.from_dict(d["layout"])
            nsel = len(d["selected"])
            models = tuple(
                BinarySvm(np.array(m["support_vectors"], dtype=np.float64).reshape(-1, nsel),
                          np.array(m["alphas"], dtype=np.float64),
                          np.array(m["labels"], dtype=np.float64),
                          float(m["bias"]), float(m["gamma"]), float(m["C"]), m["A"], m["B"])
                for m in d["models"])
            return cls(tuple(d["classes"]), models,
                       Scaler(np.array(d["scaler"]["mean"], dtype=np.float64),
                              np.array(d["scaler"]["std"], dtype=np.float64)),
                       np.array(d["selected"], dtype=np.int64), layout,
                       GridSpec(d["grid"]["stride"], d["grid"]["radius"], tuple(d["grid"]["origin"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed model bundle: {exc}") from exc

    def to_json(self) -> str:
        # float repr is the shortest string that round-trips bit-exactly
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SvmModelBundle":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"model bundle is not valid JSON: {exc}") from exc
        return cls.from_dict(d)


def predict_proba(bundle: SvmModelBundle, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return bundle.predict_proba(x)[0] if x.ndim == 1 else bundle.predict_proba(x)


def load_bundle(path) -> SvmModelBundle:
    with open(path, encoding="utf-8") as fh:
        return SvmModelBundle.from_json(fh.read())


def train_bundle(ts: TrainingSet, layout: FeatureLayout, grid: GridSpec, *, C: float = 10.0,
                 gamma: float | None = None, tol: float = 1e-3, max_iter: int | None = None,
                 k: int = 20, t_mi: float = 0.01, t_corr: float = 0.95, bins: int = 8) -> SvmModelBundle:
    """Scale, select features by mRMR, then fit one calibrated SVM per class."""
    if ts.X.shape[1] != layout.total_dim:
        raise DimensionMismatch(f"training rows have {ts.X.shape[1]} features, layout has {layout.total_dim}")
    scaler = fit_scaler(ts.X)
    Z = apply_scaler(ts.X, scaler)
    selection = mrmr_select(Z, ts.targets(), k, t_mi=t_mi, t_corr=t_corr, B=bins)
    selected = np.array(selection.selected, dtype=np.int64)
    Zs = Z[:, selected]
    if gamma is None:
        gamma = 1.0 / len(selected)
    labels = np.array(ts.labels)
    models = []
    for c in ts.classes:
        y = np.where(labels == c, 1.0, -1.0)
        m = smo_train(Zs, y, C=C, gamma=gamma, tol=tol, max_iter=max_iter)
        A, B = platt_fit(m.decision_values(Zs), y)
        models.append(replace(m, A=A, B=B))
    return SvmModelBundle(tuple(ts.classes), tuple(models), scaler, selected, layout, grid)
