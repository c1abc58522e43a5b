"""Pipeline configuration.

The config file is TOML. Sections and their keys (defaults in parentheses)::

    [grid]      stride, radius, origin ([radius, radius])
    [[recipes]] kind ("OGCM" | "GLRCM" | "GLCM" | "GLCM_STATS"), G (8),
                pair ("axis") for OGCM; w, N for GLRCM (N * w must equal
                grid.radius); offset ([1, 0]), symmetric (false) for GLCM kinds
    [sweep]     levels, ring_widths, pairs -- expands into recipes; may be
                combined with explicit [[recipes]]
    [svm]       C (10.0), gamma ("auto" = 1 / selected features), tol (1e-3),
                max_iter (automatic)
    [mrmr]      k (20), t_mi (0.01), t_corr (0.95), bins (8)
    [sampling]  negative_ratio (3.0), seed (no default; required to train)
    [detect]    p_min (0.5), link_distance (1.5 * grid.stride)
    [track]     max_gap (3)

Unknown sections and keys are rejected.
"""
from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, GridSightError
from .imagecore import GridSpec
from .synth import FeatureLayout, FeatureRecipe, build_layout, sweep_recipes
from .texture import PAIRS

_SECTIONS = {
    "grid": {"stride", "radius", "origin"},
    "sweep": {"levels", "ring_widths", "pairs"},
    "svm": {"C", "gamma", "tol", "max_iter"},
    "mrmr": {"k", "t_mi", "t_corr", "bins"},
    "sampling": {"negative_ratio", "seed"},
    "detect": {"p_min", "link_distance"},
    "track": {"max_gap"},
}
_RECIPE_KEYS = {
    "OGCM": {"kind", "G", "pair"},
    "GLRCM": {"kind", "G", "w", "N"},
    "GLCM": {"kind", "G", "offset", "symmetric"},
    "GLCM_STATS": {"kind", "G", "offset", "symmetric"},
}


@dataclass(frozen=True)
class SvmConfig:
    C: float = 10.0
    gamma: float | None = None
    tol: float = 1e-3
    max_iter: int | None = None


@dataclass(frozen=True)
class MrmrConfig:
    k: int = 20
    t_mi: float = 0.01
    t_corr: float = 0.95
    bins: int = 8


@dataclass(frozen=True)
class SamplingConfig:
    negative_ratio: float = 3.0
    seed: int | None = None


@dataclass(frozen=True)
class DetectConfig:
    p_min: float = 0.5
    link_distance: float | None = None


@dataclass(frozen=True)
class TrackConfig:
    max_gap: int = 3


@dataclass(frozen=True)
class Config:
    grid: GridSpec
    recipes: tuple[FeatureRecipe, ...]
    svm: SvmConfig = field(default_factory=SvmConfig)
    mrmr: MrmrConfig = field(default_factory=MrmrConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    detect: DetectConfig = field(default_factory=DetectConfig)
    track: TrackConfig = field(default_factory=TrackConfig)

    @property
    def layout(self) -> FeatureLayout:
        return build_layout(self.recipes, self.grid.radius)

    @property
    def link_distance(self) -> float:
        if self.detect.link_distance is not None:
            return self.detect.link_distance
        return 1.5 * self.grid.stride


class _Locator:
    """Finds the source line of a key so errors can point at it."""

    def __init__(self, text: str, source: str):
        self.lines = text.splitlines()
        self.source = source

    def line(self, section: str | None, key: str | None, nth: int = 0) -> int | None:
        current, seen = None, -1
        for i, raw in enumerate(self.lines, 1):
            s = raw.strip()
            m = re.match(r"^\[\[?\s*([A-Za-z_.]+)\s*\]\]?", s)
            if m:
                current = m.group(1)
                if current == section:
                    seen += 1
                    if key is None and seen == nth:
                        return i
                continue
            if current == section and seen == nth and key and re.match(rf"^{re.escape(key)}\s*=", s):
                return i
        return None

    def error(self, msg: str, section: str | None = None, key: str | None = None, nth: int = 0) -> ConfigError:
        where = f"{section}.{key}" if key else (section or "")
        line = self.line(section, key, nth) if section else None
        prefix = f"{self.source}:{line}" if line else self.source
        return ConfigError(f"{prefix}: {where + ': ' if where else ''}{msg}")


def _get(table, key, kind, loc, section, nth=0, default=None, positive=False, minimum=None):
    if key not in table:
        return default
    value = table[key]
    ok = isinstance(value, kind) and not (isinstance(value, bool) and kind is not bool)
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value, ok = float(value), True
    if not ok:
        raise loc.error(f"expected {getattr(kind, '__name__', kind)}, got {value!r}", section, key, nth)
    if positive and value <= 0:
        raise loc.error(f"must be positive, got {value!r}", section, key, nth)
    if minimum is not None and value < minimum:
        raise loc.error(f"must be >= {minimum}, got {value!r}", section, key, nth)
    return value


def loads_config(text: str, source: str = "<config>") -> Config:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    loc = _Locator(text, source)

    for name, table in doc.items():
        if name == "recipes":
            continue
        if name not in _SECTIONS:
            raise loc.error(f"unknown section [{name}]", name)
        if not isinstance(table, dict):
            raise loc.error("must be a table", name)
        for key in table:
            if key not in _SECTIONS[name]:
                raise loc.error("unknown key", name, key)

    if "grid" not in doc:
        raise ConfigError(f"{source}: missing [grid] section")
    g = doc["grid"]
    stride = _get(g, "stride", int, loc, "grid", minimum=1)
    radius = _get(g, "radius", int, loc, "grid", minimum=1)
    if stride is None or radius is None:
        raise loc.error("grid.stride and grid.radius are required", "grid")
    origin = g.get("origin")
    if origin is not None and (not isinstance(origin, list) or len(origin) != 2
                               or not all(isinstance(v, int) and v >= radius for v in origin)):
        raise loc.error(f"must be two integers >= radius {radius}", "grid", "origin")
    grid = GridSpec(stride, radius, tuple(origin) if origin else None)

    recipes = []
    raw_recipes = doc.get("recipes", [])
    if not isinstance(raw_recipes, list):
        raise loc.error("use [[recipes]] array-of-tables syntax", "recipes")
    for nth, r in enumerate(raw_recipes):
        kind = r.get("kind")
        if kind not in _RECIPE_KEYS:
            raise loc.error(f"unknown recipe kind {kind!r}", "recipes", "kind", nth)
        for key in r:
            if key not in _RECIPE_KEYS[kind]:
                raise loc.error(f"key not valid for {kind}", "recipes", key, nth)
        params = {"kind": kind, "G": _get(r, "G", int, loc, "recipes", nth, default=8)}
        if kind == "OGCM":
            pair = r.get("pair", "axis")
            if pair not in PAIRS:
                raise loc.error(f"must be one of {PAIRS}", "recipes", "pair", nth)
            params["pair"] = pair
        elif kind == "GLRCM":
            w = _get(r, "w", int, loc, "recipes", nth, minimum=1)
            N = _get(r, "N", int, loc, "recipes", nth, minimum=1)
            if w is None or N is None:
                raise loc.error("GLRCM needs w and N", "recipes", None, nth)
            if N * w != radius:
                raise loc.error(f"N*w = {N}*{w} = {N * w} must equal grid.radius {radius}", "recipes", "N", nth)
            params.update(w=w, N=N)
        else:
            offset = r.get("offset", [1, 0])
            if not (isinstance(offset, list) and len(offset) == 2 and all(isinstance(v, int) for v in offset)):
                raise loc.error("must be [dx, dy] integers", "recipes", "offset", nth)
            params.update(offset=tuple(offset), symmetric=_get(r, "symmetric", bool, loc, "recipes", nth, False))
        try:
            recipes.append(FeatureRecipe(**params))
        except GridSightError as exc:
            raise loc.error(str(exc), "recipes", None, nth) from None

    if "sweep" in doc:
        s = doc["sweep"]
        try:
            recipes.extend(sweep_recipes(tuple(s.get("levels", (4, 8))), tuple(s.get("ring_widths", (3, 5))),
                                         radius, tuple(s.get("pairs", PAIRS))))
        except (GridSightError, TypeError) as exc:
            raise loc.error(str(exc), "sweep") from None
    if not recipes:
        raise ConfigError(f"{source}: no feature recipes ([[recipes]] or [sweep])")

    sv = doc.get("svm", {})
    gamma = sv.get("gamma", "auto")
    if gamma == "auto":
        gamma = None
    else:
        gamma = _get(sv, "gamma", float, loc, "svm", positive=True)
    svm = SvmConfig(_get(sv, "C", float, loc, "svm", default=10.0, positive=True), gamma,
                    _get(sv, "tol", float, loc, "svm", default=1e-3, positive=True),
                    _get(sv, "max_iter", int, loc, "svm", minimum=1))
    mr = doc.get("mrmr", {})
    mrmr = MrmrConfig(_get(mr, "k", int, loc, "mrmr", default=20, minimum=1),
                      _get(mr, "t_mi", float, loc, "mrmr", default=0.01, minimum=0.0),
                      _get(mr, "t_corr", float, loc, "mrmr", default=0.95, minimum=0.0),
                      _get(mr, "bins", int, loc, "mrmr", default=8, minimum=2))
    sa = doc.get("sampling", {})
    sampling = SamplingConfig(_get(sa, "negative_ratio", float, loc, "sampling", default=3.0, minimum=0.0),
                              _get(sa, "seed", int, loc, "sampling", minimum=0))
    de = doc.get("detect", {})
    detect = DetectConfig(_get(de, "p_min", float, loc, "detect", default=0.5, minimum=0.0),
                          _get(de, "link_distance", float, loc, "detect", positive=True))
    tr = doc.get("track", {})
    track = TrackConfig(_get(tr, "max_gap", int, loc, "track", default=3, minimum=0))

    cfg = Config(grid, tuple(recipes), svm, mrmr, sampling, detect, track)
    try:
        cfg.layout
    except GridSightError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return cfg


def parse_config(path) -> Config:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return loads_config(text, str(path))
