"""Grid probability maps and the analysis built on them: thresholding,
single-link clustering, enclosing rectangles, track interpolation, overlays.
"""
from __future__ import annotations

import csv
import io
import json
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import EmptyCluster, FormatError, IncompatibleModel, UnknownClass
from .imagecore import GridPosition, GridSpec, grid_positions
from .svm import SvmModelBundle
from .synth import BACKGROUND, extract_matrix

CHUNK = 256


@dataclass(frozen=True, eq=False)
class ProbabilityMap:
    classes: tuple[str, ...]
    positions: tuple[GridPosition, ...]
    probs: np.ndarray
    frame: int = 0
    grid: GridSpec | None = None

    @property
    def shape(self) -> tuple[int, int]:
        """``(nx, ny)`` grid dimensions."""
        if not self.positions:
            return 0, 0
        return len({p.gx for p in self.positions}), len({p.gy for p in self.positions})

    def column(self, cls: str) -> np.ndarray:
        try:
            return self.probs[:, self.classes.index(cls)]
        except ValueError:
            raise UnknownClass(f"class {cls!r} not in {list(self.classes)}") from None


def map_image(image, bundle: SvmModelBundle, grid: GridSpec | None = None, frame: int = 0,
              jobs: int = 1) -> ProbabilityMap:
    """Classify every grid position of ``image``; ``grid`` defaults to the bundle's."""
    grid = grid or bundle.grid
    layout = bundle.layout
    if grid.radius != layout.radius:
        raise IncompatibleModel(f"grid radius {grid.radius} differs from the model's context radius {layout.radius}")
    positions = grid_positions(image, grid, margin=layout.halo)
    chunks = [positions[i:i + CHUNK] for i in range(0, len(positions), CHUNK)]

    def run(chunk):
        return bundle.predict_proba(extract_matrix(image, chunk, layout))

    if jobs > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    probs = np.concatenate(parts, axis=0) if parts else np.zeros((0, len(bundle.classes)))
    return ProbabilityMap(tuple(bundle.classes), tuple(positions), probs, frame, grid)


def threshold_points(pm: ProbabilityMap, cls: str, p_min: float) -> list[tuple[int, int]]:
    col = pm.column(cls)
    return [(p.x, p.y) for p, v in zip(pm.positions, col) if v >= p_min]


def cluster_points(points: Sequence[tuple[int, int]], link_distance: float) -> list[list[tuple[int, int]]]:
    """Connected components under ``distance <= link_distance``.

    Members are sorted, and clusters are ordered by their smallest member.
    """
    if link_distance <= 0:
        raise ValueError(f"link distance must be positive, got {link_distance}")
    pts = [tuple(p) for p in points]
    if not pts:
        return []
    arr = np.asarray(pts, dtype=np.float64)
    pairs = cKDTree(arr).query_pairs(link_distance, output_type="ndarray")
    n = len(pts)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, comp = connected_components(graph, directed=False)
    groups: dict[int, list] = {}
    for c, p in zip(comp, pts):
        groups.setdefault(int(c), []).append(p)
    return sorted((sorted(g) for g in groups.values()), key=lambda g: g[0])


@dataclass(frozen=True)
class Detection:
    cls: str
    rect: tuple[float, float, float, float]
    centroid: tuple[float, float]
    frame: int = 0
    interpolated: bool = False
    points: tuple[tuple[int, int], ...] = field(default=(), repr=False)
    n_points: int = 0

    def to_json(self) -> dict:
        return {"frame": self.frame, "class": self.cls, "rect": list(self.rect),
                "centroid": list(self.centroid), "n_points": self.n_points,
                "interpolated": self.interpolated}

    @classmethod
    def from_json(cls, d: dict) -> "Detection":
        try:
            return cls(d["class"], tuple(d["rect"]), tuple(d["centroid"]), int(d["frame"]),
                       bool(d["interpolated"]), (), int(d["n_points"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed detection record {d!r}") from exc


def summarize_cluster(cluster, cls: str = "", frame: int = 0) -> Detection:
    pts = [tuple(p) for p in cluster]
    if not pts:
        raise EmptyCluster("cannot summarize an empty cluster")
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    centroid = (sum(xs) / len(pts), sum(ys) / len(pts))
    return Detection(cls, (min(xs), min(ys), max(xs), max(ys)), centroid, frame, False,
                     tuple(pts), len(pts))


def detect(pm: ProbabilityMap, p_min: float = 0.5, link_distance: float | None = None,
           classes: Iterable[str] | None = None) -> list[Detection]:
    """All clusters of every requested class (default: every non-background class)."""
    if link_distance is None:
        stride = pm.grid.stride if pm.grid else 1
        link_distance = 1.5 * stride
    if classes is None:
        classes = [c for c in pm.classes if c != BACKGROUND]
    out = []
    for cls in classes:
        for cluster in cluster_points(threshold_points(pm, cls, p_min), link_distance):
            out.append(summarize_cluster(cluster, cls, pm.frame))
    return out


def primary_detection(detections: Sequence[Detection]) -> Detection | None:
    """Largest cluster; ties go to the leftmost, then topmost rectangle."""
    if not detections:
        return None
    return min(detections, key=lambda d: (-d.n_points, d.rect[0], d.rect[1]))


@dataclass(frozen=True)
class Track:
    cls: str
    max_gap: int
    frames: Mapping[int, Detection]

    def detections(self) -> list[Detection]:
        return [self.frames[f] for f in sorted(self.frames)]


def _lerp(a, b, t):
    return tuple((1.0 - t) * u + t * v for u, v in zip(a, b))


def interpolate_track(detections, max_gap: int, cls: str | None = None) -> Track:
    """Fill gaps of at most ``max_gap`` frames between real detections linearly.

    ``detections`` is a mapping ``frame -> Detection`` or a sequence indexed by
    frame with ``None`` for missing frames. Leading and trailing gaps stay empty.
    """
    if isinstance(detections, Mapping):
        real = {int(f): d for f, d in detections.items() if d is not None}
    else:
        real = {f: d for f, d in enumerate(detections) if d is not None}
    if cls is None:
        cls = next(iter(real.values())).cls if real else ""
    frames = dict(real)
    keys = sorted(real)
    for a, b in zip(keys, keys[1:]):
        gap = b - a - 1
        if gap < 1 or gap > max_gap:
            continue
        da, db = real[a], real[b]
        for f in range(a + 1, b):
            t = (f - a) / (b - a)
            frames[f] = Detection(cls, _lerp(da.rect, db.rect, t), _lerp(da.centroid, db.centroid, t),
                                  f, True, (), 0)
    return Track(cls, max_gap, {f: frames[f] for f in sorted(frames)})


def build_tracks(detections: Iterable[Detection], max_gap: int) -> list[Detection]:
    """One track per class from the largest cluster per frame, flattened by class then frame."""
    by_class: dict[str, dict[int, list[Detection]]] = {}
    for d in detections:
        if not d.interpolated:
            by_class.setdefault(d.cls, {}).setdefault(d.frame, []).append(d)
    out = []
    for cls in sorted(by_class):
        chosen = {f: primary_detection(ds) for f, ds in by_class[cls].items()}
        out.extend(interpolate_track(chosen, max_gap, cls).detections())
    return out


# --- rendering -----------------------------------------------------------------

PALETTE = (
    (255, 0, 0), (0, 200, 0), (0, 96, 255), (255, 200, 0),
    (255, 0, 255), (0, 220, 220), (255, 128, 0), (160, 0, 255),
)


def class_color(cls: str) -> tuple[int, int, int]:
    return PALETTE[zlib.crc32(cls.encode("utf-8")) % len(PALETTE)]


def render_overlay(image, detections: Iterable[Detection]) -> np.ndarray:
    """Color copy of ``image`` with rectangle outlines and 3x3 centroid marks."""
    gray = image.pixels
    h, w = gray.shape
    rgb = np.repeat(gray[:, :, None], 3, axis=2).copy()
    for d in detections:
        color = class_color(d.cls)
        x0, y0, x1, y1 = (int(round(v)) for v in d.rect)
        xa, xb = max(x0, 0), min(x1, w - 1)
        ya, yb = max(y0, 0), min(y1, h - 1)
        if xa <= xb:
            for yy in (y0, y1):
                if 0 <= yy < h:
                    rgb[yy, xa:xb + 1] = color
        if ya <= yb:
            for xx in (x0, x1):
                if 0 <= xx < w:
                    rgb[ya:yb + 1, xx] = color
        cx, cy = int(round(d.centroid[0])), int(round(d.centroid[1]))
        rgb[max(cy - 1, 0):max(min(cy + 2, h), 0), max(cx - 1, 0):max(min(cx + 2, w), 0)] = color
    return rgb


# --- file formats ----------------------------------------------------------------

def format_probability_csv(maps: Iterable[ProbabilityMap]) -> str:
    maps = list(maps)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    classes = maps[0].classes if maps else ()
    writer.writerow(["frame", "gx", "gy", "x", "y"] + [f"p_{c}" for c in classes])
    for pm in maps:
        if pm.classes != classes:
            raise FormatError("all maps in one file must share the class list")
        for pos, row in zip(pm.positions, pm.probs):
            writer.writerow([pm.frame, pos.gx, pos.gy, pos.x, pos.y] + [repr(float(v)) for v in row])
    return buf.getvalue()


def parse_probability_csv(text: str, source: str = "<csv>") -> list[ProbabilityMap]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError(f"{source}: empty probability map file") from None
    if header[:5] != ["frame", "gx", "gy", "x", "y"] or not all(h.startswith("p_") for h in header[5:]):
        raise FormatError(f"{source}: unexpected header {header}")
    classes = tuple(h[2:] for h in header[5:])
    frames: dict[int, tuple[list, list]] = {}
    for lineno, row in enumerate(reader, 2):
        if not row:
            continue
        if len(row) != len(header):
            raise FormatError(f"{source}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            f, gx, gy, x, y = (int(v) for v in row[:5])
            probs = [float(v) for v in row[5:]]
        except ValueError:
            raise FormatError(f"{source}:{lineno}: malformed number") from None
        pos, pr = frames.setdefault(f, ([], []))
        pos.append(GridPosition(gx, gy, x, y))
        pr.append(probs)
    return [ProbabilityMap(classes, tuple(pos), np.array(pr, dtype=np.float64).reshape(-1, len(classes)), f)
            for f, (pos, pr) in sorted(frames.items())]


def format_detections(detections: Iterable[Detection]) -> str:
    return "".join(json.dumps(d.to_json(), sort_keys=True) + "\n" for d in detections)


def parse_detections(text: str, source: str = "<jsonl>") -> list[Detection]:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(Detection.from_json(json.loads(line)))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{source}:{lineno}: {exc}") from exc
    return out
