"""Texture matrices over disk-shaped context regions.

Three counting matrices are provided:

* OGCM, indexed by the absolute central-difference gradients ``(|g1|, |g2|)``
  along a pair of orthogonal directions at every disk pixel;
* GLRCM, a gray-level histogram per concentric ring of width ``w``;
* GLCM, the classic co-occurrence matrix for a displacement ``(dx, dy)``.

Each matrix is accumulated with a single pass over the disk pixels. The
``*_counts`` functions work on a whole batch of centers at once and return
``(P, rows, cols)`` integer arrays; the ``compute_*`` functions wrap them for a
single center.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameter, OutOfBounds
from .imagecore import QuantizedImage, disk_offsets

PAIRS = ("axis", "diagonal")

# (dx, dy) of the "plus" neighbour for g1 and g2; the "minus" neighbour is mirrored
_PAIR_STEPS = {
    "axis": ((0, 1), (1, 0)),
    "diagonal": ((1, 1), (1, -1)),
}


@dataclass(frozen=True, eq=False)
class OgcmMatrix:
    counts: np.ndarray
    pair: str


@dataclass(frozen=True, eq=False)
class GlrcmMatrix:
    """Row ``n - 1`` holds the histogram of ring ``n`` (rings count from 1)."""

    counts: np.ndarray
    ring_width: int
    rings: int


@dataclass(frozen=True, eq=False)
class GlcmMatrix:
    counts: np.ndarray
    offset: tuple[int, int]
    symmetric: bool


def _centers(centers) -> np.ndarray:
    c = np.asarray([(p.x, p.y) if hasattr(p, "x") else tuple(p) for p in centers], dtype=np.int64)
    return c.reshape(-1, 2)


def _xy(center) -> tuple[int, int]:
    if hasattr(center, "x"):
        return int(center.x), int(center.y)
    x, y = center
    return int(x), int(y)


def _check_inside(q: QuantizedImage, c: np.ndarray, reach: int):
    if c.size == 0:
        return
    if (c[:, 0].min() < reach or c[:, 1].min() < reach
            or c[:, 0].max() > q.width - 1 - reach or c[:, 1].max() > q.height - 1 - reach):
        raise OutOfBounds(f"region of reach {reach} leaves the {q.width}x{q.height} image")


def _check_pair(pair: str):
    if pair not in _PAIR_STEPS:
        raise InvalidParameter(f"unknown direction pair {pair!r}; expected one of {PAIRS}")


def orthogonal_gradients(q: QuantizedImage, p, pair: str = "axis") -> tuple[int, int]:
    """Signed central differences ``(g1, g2)`` at pixel ``p`` along ``pair``."""
    _check_pair(pair)
    x, y = _xy(p)
    if not (1 <= x <= q.width - 2 and 1 <= y <= q.height - 2):
        raise OutOfBounds(f"gradient neighbourhood of ({x}, {y}) leaves the image")
    a = q.pixels
    out = []
    for dx, dy in _PAIR_STEPS[pair]:
        out.append(int(a[y + dy, x + dx]) - int(a[y - dy, x - dx]))
    return out[0], out[1]


def ogcm_counts(q: QuantizedImage, centers, R: int, pair: str = "axis") -> np.ndarray:
    """OGCM counts ``(P, G, G)`` for every center; gradient magnitudes clamp to G-1."""
    _check_pair(pair)
    c = _centers(centers)
    _check_inside(q, c, R + 1)
    G = q.levels
    offs = disk_offsets(R)
    xs = c[:, 0:1] + offs[None, :, 0]
    ys = c[:, 1:2] + offs[None, :, 1]
    a = q.pixels.astype(np.int16)
    mags = []
    for dx, dy in _PAIR_STEPS[pair]:
        g = a[ys + dy, xs + dx] - a[ys - dy, xs - dx]
        mags.append(np.minimum(np.abs(g), G - 1).astype(np.int64))
    flat = (np.arange(len(c))[:, None] * G + mags[0]) * G + mags[1]
    return np.bincount(flat.ravel(), minlength=len(c) * G * G).reshape(len(c), G, G)


def compute_ogcm(q: QuantizedImage, center, R: int, pair: str = "axis") -> OgcmMatrix:
    return OgcmMatrix(ogcm_counts(q, [_xy(center)], R, pair)[0], pair)


def _ceil_sqrt(n: int) -> int:
    r = math.isqrt(n)
    return r if r * r == n else r + 1


@functools.lru_cache(maxsize=None)
def ring_index(w: int, N: int) -> np.ndarray:
    """Zero-based ring of every offset of ``disk_offsets(N * w)``.

    A pixel at distance ``r`` belongs to ring ``max(1, ceil(r / w))``; the
    test ``(n w)^2 >= dx^2 + dy^2`` keeps this exact on the integer lattice.
    """
    offs = disk_offsets(N * w)
    d2 = (offs ** 2).sum(axis=1)
    rings = np.array([max(1, -(-_ceil_sqrt(int(v)) // w)) for v in d2], dtype=np.int64) - 1
    rings.setflags(write=False)
    return rings


def glrcm_counts(q: QuantizedImage, centers, w: int, N: int) -> np.ndarray:
    """GLRCM counts ``(P, N, G)`` for every center, context radius ``N * w``."""
    if w < 1 or N < 1:
        raise InvalidParameter(f"ring width and ring count must be >= 1, got w={w}, N={N}")
    c = _centers(centers)
    R = N * w
    _check_inside(q, c, R)
    G = q.levels
    offs = disk_offsets(R)
    levels = q.pixels[c[:, 1:2] + offs[None, :, 1], c[:, 0:1] + offs[None, :, 0]].astype(np.int64)
    flat = (np.arange(len(c))[:, None] * N + ring_index(w, N)[None, :]) * G + levels
    return np.bincount(flat.ravel(), minlength=len(c) * N * G).reshape(len(c), N, G)


def compute_glrcm(q: QuantizedImage, center, w: int, N: int) -> GlrcmMatrix:
    return GlrcmMatrix(glrcm_counts(q, [_xy(center)], w, N)[0], w, N)


@functools.lru_cache(maxsize=None)
def _glcm_pairs(R: int, dx: int, dy: int) -> tuple[np.ndarray, np.ndarray]:
    # indices (i, j) into disk_offsets(R) with offset[j] = offset[i] + (dx, dy)
    offs = disk_offsets(R)
    lookup = np.full((2 * R + 1, 2 * R + 1), -1, dtype=np.int64)
    lookup[offs[:, 1] + R, offs[:, 0] + R] = np.arange(len(offs))
    px, py = offs[:, 0] + dx, offs[:, 1] + dy
    ok = (np.abs(px) <= R) & (np.abs(py) <= R)
    j = np.full(len(offs), -1, dtype=np.int64)
    j[ok] = lookup[py[ok] + R, px[ok] + R]
    keep = j >= 0
    return np.flatnonzero(keep), j[keep]


def glcm_counts(q: QuantizedImage, centers, R: int, offset=(1, 0), symmetric: bool = False) -> np.ndarray:
    """GLCM counts ``(P, G, G)``; only pairs with both pixels in the disk count."""
    dx, dy = (int(v) for v in offset)
    if (dx, dy) == (0, 0):
        raise InvalidParameter("GLCM offset must be non-zero")
    c = _centers(centers)
    _check_inside(q, c, R)
    G = q.levels
    offs = disk_offsets(R)
    levels = q.pixels[c[:, 1:2] + offs[None, :, 1], c[:, 0:1] + offs[None, :, 0]].astype(np.int64)
    i, j = _glcm_pairs(R, dx, dy)
    base = np.arange(len(c))[:, None] * G * G
    a, b = levels[:, i], levels[:, j]
    flat = base + a * G + b
    if symmetric:
        flat = np.concatenate([flat, base + b * G + a], axis=1)
    return np.bincount(flat.ravel(), minlength=len(c) * G * G).reshape(len(c), G, G)


def compute_glcm(q: QuantizedImage, center, R: int, offset=(1, 0), symmetric: bool = False) -> GlcmMatrix:
    counts = glcm_counts(q, [_xy(center)], R, offset, symmetric)[0]
    return GlcmMatrix(counts, (int(offset[0]), int(offset[1])), bool(symmetric))


def normalize_matrix(m) -> np.ndarray:
    """Divide by the total so entries are frequencies; zeros stay zeros.

    Leading axes are treated as a batch when ``m`` has more than two dims.
    """
    m = np.asarray(getattr(m, "counts", m), dtype=np.float64)
    if m.ndim <= 2:
        total = m.sum()
        return m / total if total > 0 else np.zeros_like(m)
    total = m.sum(axis=(-2, -1), keepdims=True)
    return np.divide(m, total, out=np.zeros_like(m), where=total > 0)


def glcm_stats(p) -> tuple[float, float, float]:
    """Haralick homogeneity, entropy (bits) and contrast of a normalized matrix."""
    p = np.asarray(getattr(p, "counts", p), dtype=np.float64)
    i, j = np.indices(p.shape)
    d2 = (i - j) ** 2
    nz = p[p > 0]
    homogeneity = float((p / (1.0 + d2)).sum())
    entropy = float(-(nz * np.log2(nz)).sum()) + 0.0
    contrast = float((p * d2).sum())
    return homogeneity, entropy, contrast


def glcm_stats_batch(p: np.ndarray) -> np.ndarray:
    """Row-wise :func:`glcm_stats` for a ``(P, G, G)`` stack; returns ``(P, 3)``."""
    G = p.shape[-1]
    i, j = np.indices((G, G))
    d2 = (i - j) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
    return np.stack([
        (p / (1.0 + d2)).sum(axis=(1, 2)),
        -plogp.sum(axis=(1, 2)) + 0.0,
        (p * d2).sum(axis=(1, 2)),
    ], axis=1)
