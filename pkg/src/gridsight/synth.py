"""Feature synthesis: recipes, layouts, extraction at grid positions, scaling
and training-set assembly from labeled points.
"""
from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import texture
from .errors import DimensionMismatch, FormatError, InsufficientData, InvalidParameter
from .imagecore import (GrayImage, GridSpec, QuantizedImage, disk_fits, disk_offsets, grid_positions, load_image,
                        quantize)

KINDS = ("OGCM", "GLRCM", "GLCM", "GLCM_STATS")
STAT_NAMES = ("homogeneity", "entropy", "contrast")
BACKGROUND = "background"
# disk samples per extraction batch; bounds the working set of the gathers
CHUNK_SAMPLES = 1 << 15


@dataclass(frozen=True)
class FeatureRecipe:
    """One parameterized texture matrix (or its summary statistics).

    ``G`` is the quantization level count. OGCM uses ``pair``; GLRCM uses
    ring width ``w`` and ring count ``N``; GLCM and GLCM_STATS use ``offset``
    and ``symmetric``.
    """

    kind: str
    G: int
    pair: str | None = None
    w: int | None = None
    N: int | None = None
    offset: tuple[int, int] | None = None
    symmetric: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidParameter(f"unknown recipe kind {self.kind!r}")
        if not isinstance(self.G, int) or not 2 <= self.G <= 256:
            raise InvalidParameter(f"{self.kind}: G must be an integer in [2, 256], got {self.G!r}")
        if self.kind == "OGCM":
            pair = self.pair or "axis"
            if pair not in texture.PAIRS:
                raise InvalidParameter(f"OGCM: unknown direction pair {pair!r}")
            object.__setattr__(self, "pair", pair)
        elif self.kind == "GLRCM":
            if self.w is None or self.N is None or self.w < 1 or self.N < 1:
                raise InvalidParameter(f"GLRCM needs w >= 1 and N >= 1, got w={self.w}, N={self.N}")
        else:
            off = tuple(int(v) for v in (self.offset or (1, 0)))
            if len(off) != 2 or off == (0, 0):
                raise InvalidParameter(f"{self.kind}: offset must be a non-zero (dx, dy), got {self.offset}")
            object.__setattr__(self, "offset", off)
            object.__setattr__(self, "symmetric", bool(self.symmetric))

    @property
    def implied_radius(self) -> int | None:
        return self.w * self.N if self.kind == "GLRCM" else None

    @property
    def label(self) -> str:
        if self.kind == "OGCM":
            params = f"G={self.G},pair={self.pair}"
        elif self.kind == "GLRCM":
            params = f"G={self.G},w={self.w},N={self.N}"
        else:
            params = f"G={self.G},dx={self.offset[0]},dy={self.offset[1]},sym={int(self.symmetric)}"
        return f"{self.kind}[{params}]"

    @property
    def dim(self) -> int:
        if self.kind == "GLRCM":
            return self.N * self.G
        if self.kind == "GLCM_STATS":
            return len(STAT_NAMES)
        return self.G * self.G

    def cells(self) -> list[str]:
        if self.kind == "GLCM_STATS":
            return list(STAT_NAMES)
        if self.kind == "GLRCM":
            # rings are numbered from 1
            return [f"{n},{g}" for n in range(1, self.N + 1) for g in range(self.G)]
        return [f"{a},{b}" for a in range(self.G) for b in range(self.G)]

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "G": self.G}
        if self.kind == "OGCM":
            d["pair"] = self.pair
        elif self.kind == "GLRCM":
            d.update(w=self.w, N=self.N)
        else:
            d.update(offset=list(self.offset), symmetric=self.symmetric)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureRecipe":
        d = dict(d)
        if "offset" in d:
            d["offset"] = tuple(d["offset"])
        return cls(**d)


@dataclass(frozen=True)
class FeatureLayout:
    recipes: tuple[FeatureRecipe, ...]
    radius: int
    slots: tuple[tuple[int, str], ...] = field(repr=False)

    @property
    def total_dim(self) -> int:
        return len(self.slots)

    @property
    def halo(self) -> int:
        """Extra border clearance needed beyond the disk (gradients need 1 px)."""
        return 1 if any(r.kind == "OGCM" for r in self.recipes) else 0

    def slot_names(self) -> list[str]:
        return [f"{self.recipes[i].label}:{cell}" for i, cell in self.slots]

    def blocks(self) -> list[slice]:
        out, start = [], 0
        for r in self.recipes:
            out.append(slice(start, start + r.dim))
            start += r.dim
        return out

    def to_dict(self) -> dict:
        return {"radius": self.radius, "recipes": [r.to_dict() for r in self.recipes]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureLayout":
        return build_layout([FeatureRecipe.from_dict(r) for r in d["recipes"]], d["radius"])

    @classmethod
    def from_json(cls, text: str) -> "FeatureLayout":
        return cls.from_dict(json.loads(text))


def build_layout(recipes: Sequence[FeatureRecipe], radius: int | None = None) -> FeatureLayout:
    """Order the feature slots of ``recipes`` sharing one context radius.

    ``radius`` may be omitted when a GLRCM recipe implies it. Every GLRCM
    recipe must satisfy ``N * w == radius``.
    """
    recipes = tuple(recipes)
    if not recipes:
        raise InvalidParameter("layout needs at least one recipe")
    implied = {r.implied_radius for r in recipes if r.implied_radius is not None}
    if radius is None:
        if len(implied) != 1:
            raise InvalidParameter("context radius not given and not implied by exactly one GLRCM radius")
        radius = implied.pop()
    if radius < 1:
        raise InvalidParameter(f"context radius must be >= 1, got {radius}")
    bad = [r.label for r in recipes if r.implied_radius not in (None, radius)]
    if bad:
        raise InvalidParameter(f"GLRCM recipes {bad} have N*w != context radius {radius}")
    slots = tuple((i, cell) for i, r in enumerate(recipes) for cell in r.cells())
    return FeatureLayout(recipes, int(radius), slots)


def sweep_recipes(levels=(4, 8), ring_widths=(3, 5), radius=15, pairs=texture.PAIRS) -> list[FeatureRecipe]:
    """Recipes for a sweep over gray-level counts and ring widths at one radius.

    Each G contributes an OGCM per direction pair and a GLRCM per ring width
    dividing the radius.
    """
    out = []
    for G in levels:
        out.extend(FeatureRecipe("OGCM", G, pair=p) for p in pairs)
        for w in ring_widths:
            if radius % w:
                raise InvalidParameter(f"ring width {w} does not divide radius {radius}")
            out.append(FeatureRecipe("GLRCM", G, w=w, N=radius // w))
    return out


def _quantizer(image) -> Callable[[int], QuantizedImage]:
    if isinstance(image, QuantizedImage):
        def get(G):
            if G != image.levels:
                raise InvalidParameter(f"recipe needs G={G} but image is quantized to {image.levels} levels")
            return image
        return get
    cache: dict[int, QuantizedImage] = {}

    def get(G):
        if G not in cache:
            cache[G] = quantize(image, G)
        return cache[G]
    return get


def extract_matrix(image, positions, layout: FeatureLayout) -> np.ndarray:
    """Feature rows ``(P, total_dim)`` for a batch of positions.

    ``image`` is a GrayImage (quantized per recipe) or a QuantizedImage whose
    level count matches every recipe.
    """
    get = _quantizer(image)
    R = layout.radius
    positions = list(positions)
    P = len(positions)
    step = max(1, CHUNK_SAMPLES // len(disk_offsets(R)))
    if P > step:
        return np.concatenate([_extract_rows(get, positions[i:i + step], layout)
                               for i in range(0, P, step)], axis=0)
    return _extract_rows(get, positions, layout)


def _extract_rows(get, positions, layout: FeatureLayout) -> np.ndarray:
    R = layout.radius
    P = len(positions)
    blocks = []
    for r in layout.recipes:
        q = get(r.G)
        if r.kind == "OGCM":
            m = texture.normalize_matrix(texture.ogcm_counts(q, positions, R, r.pair))
        elif r.kind == "GLRCM":
            m = texture.normalize_matrix(texture.glrcm_counts(q, positions, r.w, r.N))
        else:
            m = texture.normalize_matrix(texture.glcm_counts(q, positions, R, r.offset, r.symmetric))
            if r.kind == "GLCM_STATS":
                m = texture.glcm_stats_batch(m)
        blocks.append(m.reshape(P, -1))
    return np.concatenate(blocks, axis=1)


def extract_vector(image, pos, layout: FeatureLayout, R: int | None = None) -> np.ndarray:
    if R is not None and R != layout.radius:
        raise InvalidParameter(f"radius {R} does not match layout radius {layout.radius}")
    return extract_matrix(image, [pos], layout)[0]


@dataclass(frozen=True, eq=False)
class Scaler:
    mean: np.ndarray
    std: np.ndarray


def fit_scaler(rows) -> Scaler:
    X = np.asarray(rows, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise InsufficientData("scaler needs at least 2 rows")
    return Scaler(X.mean(axis=0), X.std(axis=0))


def apply_scaler(v, s: Scaler) -> np.ndarray:
    """Standardize ``v`` (one vector or a stack of rows); constant features map to 0."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != s.mean.shape[0]:
        raise DimensionMismatch(f"vector has {v.shape[-1]} features, scaler expects {s.mean.shape[0]}")
    safe = np.where(s.std > 0, s.std, 1.0)
    return np.where(s.std > 0, (v - s.mean) / safe, 0.0)


# --- labels and training sets --------------------------------------------------

@dataclass(frozen=True)
class LabeledPoint:
    image: str
    cls: str
    x: int
    y: int


def parse_labels(text: str, base_dir: str = ".", source: str = "<labels>") -> list[LabeledPoint]:
    """Parse ``<image-path> <class-name> <x> <y>`` records; ``#`` starts a comment."""
    points = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise FormatError(f"{source}:{lineno}: expected '<image> <class> <x> <y>', got {line!r}")
        path, cls, x, y = parts
        try:
            x, y = int(x), int(y)
        except ValueError:
            raise FormatError(f"{source}:{lineno}: coordinates must be integers") from None
        points.append(LabeledPoint(os.path.join(base_dir, path), cls, x, y))
    return points


def read_labels(path) -> list[LabeledPoint]:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_labels(text, os.path.dirname(os.fspath(path)), os.fspath(path))


@dataclass(frozen=True, eq=False)
class TrainingSet:
    X: np.ndarray
    labels: tuple[str, ...]
    classes: tuple[str, ...]
    sources: tuple[tuple[str, int, int], ...] = ()

    def targets(self) -> np.ndarray:
        index = {c: i for i, c in enumerate(self.classes)}
        return np.array([index[c] for c in self.labels], dtype=np.int64)


def assemble_training_set(points: Sequence[LabeledPoint], layout: FeatureLayout, grid: GridSpec,
                          negative_ratio: float = 3.0, seed: int = 0,
                          loader: Callable[[str], GrayImage] = load_image) -> TrainingSet:
    """Extract one row per usable labeled point, sampling background rows if needed.

    Points whose context region (plus gradient halo) leaves the image are
    skipped with a warning. When no point is labeled ``background``,
    ``round(negative_ratio * n_positive)`` grid positions farther than the
    context radius from every labeled point of their image are drawn
    without replacement and labeled ``background``.
    """
    R, halo = layout.radius, layout.halo
    images: dict[str, GrayImage] = {}
    by_image: dict[str, list[LabeledPoint]] = {}
    for p in points:
        if p.image not in images:
            images[p.image] = loader(p.image)
        by_image.setdefault(p.image, []).append(p)

    rows, labels, sources = [], [], []
    for path, pts in by_image.items():
        img = images[path]
        usable = []
        for p in pts:
            if disk_fits(img, p.x, p.y, R, halo):
                usable.append(p)
            else:
                warnings.warn(f"{path}: point ({p.x}, {p.y}) of class {p.cls!r} skipped, "
                              f"context radius {R} leaves the image", stacklevel=2)
        if usable:
            rows.append(extract_matrix(img, [(p.x, p.y) for p in usable], layout))
            labels.extend(p.cls for p in usable)
            sources.extend((path, p.x, p.y) for p in usable)

    if labels and BACKGROUND not in labels:
        candidates = []
        for path, pts in by_image.items():
            marks = np.array([(p.x, p.y) for p in pts], dtype=np.float64)
            for pos in grid_positions(images[path], grid, margin=halo):
                d2 = ((marks - (pos.x, pos.y)) ** 2).sum(axis=1)
                if (d2 > R * R).all():
                    candidates.append((path, pos.x, pos.y))
        wanted = int(round(negative_ratio * len(labels)))
        if wanted > len(candidates):
            warnings.warn(f"only {len(candidates)} background candidates for {wanted} requested", stacklevel=2)
            wanted = len(candidates)
        rng = np.random.default_rng(seed)
        picked = np.sort(rng.choice(len(candidates), size=wanted, replace=False))
        chosen = [candidates[i] for i in picked]
        for path in by_image:
            mine = [(x, y) for p, x, y in chosen if p == path]
            if mine:
                rows.append(extract_matrix(images[path], mine, layout))
                labels.extend([BACKGROUND] * len(mine))
                sources.extend((path, x, y) for x, y in mine)

    classes = tuple(sorted(set(labels)))
    if len(classes) < 2:
        raise InsufficientData(f"training set needs at least 2 classes, got {list(classes)}")
    return TrainingSet(np.concatenate(rows, axis=0), tuple(labels), classes, tuple(sources))
