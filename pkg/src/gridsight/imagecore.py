"""Gray-level rasters, PNM input/output, quantization and grid geometry.

Images are held as ``(height, width)`` numpy arrays indexed ``[y, x]``.
Grid positions whose context disk would cross the image border are skipped
rather than clamped, so every context region has the same pixel count.
"""
from __future__ import annotations

import functools
import os
import re
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import FormatError, InvalidParameter

_PNM_MAGICS = {b"P2", b"P3", b"P5", b"P6"}


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GrayImage:
    """8-bit gray raster. ``pixels[y, x]`` is the level at column x, row y."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pixels)
        if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 1:
            raise InvalidParameter(f"image must be a non-empty 2-D array, got shape {p.shape}")
        if p.size and (p.min() < 0 or p.max() > 255):
            raise InvalidParameter("gray levels must lie in 0..255")
        object.__setattr__(self, "pixels", _frozen(p, np.uint8))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def data(self) -> list[int]:
        """Row-major flat list of levels."""
        return self.pixels.ravel().tolist()

    @classmethod
    def from_list(cls, width: int, height: int, data) -> "GrayImage":
        if len(data) != width * height:
            raise InvalidParameter(f"expected {width * height} values, got {len(data)}")
        return cls(np.asarray(data).reshape(height, width))

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class QuantizedImage:
    """Raster with values in ``0..levels-1``."""

    pixels: np.ndarray
    levels: int

    def __post_init__(self):
        if not 2 <= self.levels <= 256:
            raise InvalidParameter(f"level count must be in [2, 256], got {self.levels}")
        p = np.asarray(self.pixels)
        if p.ndim != 2 or p.size == 0:
            raise InvalidParameter("quantized image must be a non-empty 2-D array")
        if p.min() < 0 or p.max() >= self.levels:
            raise InvalidParameter(f"values must lie in 0..{self.levels - 1}")
        object.__setattr__(self, "pixels", _frozen(p, np.uint8))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class GridSpec:
    """Grid resolution (``stride``), context radius and lattice origin.

    The origin defaults to ``(radius, radius)``, the first center at which a
    full disk fits.
    """

    stride: int
    radius: int
    origin: tuple[int, int] | None = None

    def __post_init__(self):
        if self.stride < 1:
            raise InvalidParameter(f"grid stride must be >= 1, got {self.stride}")
        if self.radius < 1:
            raise InvalidParameter(f"context radius must be >= 1, got {self.radius}")
        origin = (self.radius, self.radius) if self.origin is None else tuple(int(v) for v in self.origin)
        if len(origin) != 2 or min(origin) < self.radius:
            raise InvalidParameter(f"grid origin {origin} must have components >= radius {self.radius}")
        object.__setattr__(self, "origin", origin)


class GridPosition(NamedTuple):
    gx: int
    gy: int
    x: int
    y: int


def quantize(img: GrayImage, G: int) -> QuantizedImage:
    """Map levels 0..255 onto ``G`` uniform bins: ``q = floor(p * G / 256)``."""
    if not isinstance(G, (int, np.integer)) or not 2 <= G <= 256:
        raise InvalidParameter(f"G must be an integer in [2, 256], got {G!r}")
    q = (img.pixels.astype(np.int32) * int(G)) >> 8
    return QuantizedImage(q.astype(np.uint8), int(G))


def _axis_values(origin: int, stride: int, size: int, reach: int) -> range:
    # lattice coordinates c = origin + k*stride with reach <= c <= size-1-reach
    lo = origin
    if lo < reach:
        lo += -(-(reach - lo) // stride) * stride
    hi = size - 1 - reach
    if lo > hi:
        return range(0)
    return range(lo, hi + 1, stride)


def grid_shape(img, grid: GridSpec, margin: int = 0) -> tuple[int, int]:
    """Return ``(nx, ny)``: grid columns and rows that fit in ``img``."""
    reach = grid.radius + margin
    xs = _axis_values(grid.origin[0], grid.stride, img.width, reach)
    ys = _axis_values(grid.origin[1], grid.stride, img.height, reach)
    return len(xs), len(ys)


def grid_positions(img, grid: GridSpec, margin: int = 0) -> list[GridPosition]:
    """List the grid positions whose context disk lies inside ``img``.

    Positions come in row-major order. ``margin`` widens the required clearance
    beyond the disk, e.g. by one pixel when gradients are taken at disk pixels.
    Grid indices ``gx, gy`` count lattice steps from the origin.
    """
    reach = grid.radius + margin
    x0, y0 = grid.origin
    xs = _axis_values(x0, grid.stride, img.width, reach)
    ys = _axis_values(y0, grid.stride, img.height, reach)
    return [
        GridPosition((x - x0) // grid.stride, (y - y0) // grid.stride, x, y)
        for y in ys
        for x in xs
    ]


@functools.lru_cache(maxsize=None)
def _disk_offsets(R: int) -> np.ndarray:
    d = np.arange(-R, R + 1)
    dy, dx = np.meshgrid(d, d, indexing="ij")
    inside = dx * dx + dy * dy <= R * R
    offs = np.stack([dx[inside], dy[inside]], axis=1).astype(np.int64)
    offs.setflags(write=False)
    return offs


def disk_offsets(R: int) -> np.ndarray:
    """``(n, 2)`` array of ``(dx, dy)`` with ``dx^2 + dy^2 <= R^2``, dy-major."""
    if R < 0:
        raise InvalidParameter(f"disk radius must be >= 0, got {R}")
    return _disk_offsets(int(R))


def disk_pixels(center, R: int) -> list[tuple[int, int]]:
    """Absolute pixel coordinates of the disk of radius ``R`` around ``center``.

    With ``center=(0, 0)`` this is the list of offsets.
    """
    cx, cy = center
    return [(cx + int(dx), cy + int(dy)) for dx, dy in disk_offsets(R)]


def disk_fits(img, x: int, y: int, R: int, margin: int = 0) -> bool:
    reach = R + margin
    return reach <= x <= img.width - 1 - reach and reach <= y <= img.height - 1 - reach


# --- PNM input/output ---------------------------------------------------------

def _read_header(buf: bytes, count: int, path) -> tuple[list[int], int]:
    """Read ``count`` integer header tokens after the magic, honouring comments."""
    pos = 2
    values = []
    while len(values) < count:
        while pos < len(buf) and (buf[pos:pos + 1].isspace() or buf[pos:pos + 1] == b"#"):
            if buf[pos:pos + 1] == b"#":
                eol = buf.find(b"\n", pos)
                pos = len(buf) if eol < 0 else eol
            pos += 1
        start = pos
        while pos < len(buf) and buf[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: malformed or truncated header")
        values.append(int(buf[start:pos]))
    return values, pos


def parse_pnm(buf: bytes, path="<bytes>") -> GrayImage:
    """Decode PGM (P2/P5) or PPM (P3/P6) bytes into a GrayImage.

    Color pixels are reduced to the floor of the channel mean; samples are
    then rescaled to 0..255 by ``floor(p * 255 / maxval)``.
    """
    magic = buf[:2]
    if magic not in _PNM_MAGICS:
        raise FormatError(f"{path}: unsupported magic number {magic!r}")
    (width, height, maxval), pos = _read_header(buf, 3, path)
    if width < 1 or height < 1:
        raise FormatError(f"{path}: bad dimensions {width}x{height}")
    if not 1 <= maxval <= 65535:
        raise FormatError(f"{path}: maxval {maxval} outside [1, 65535]")
    channels = 3 if magic in (b"P3", b"P6") else 1
    n = width * height * channels

    if magic in (b"P5", b"P6"):
        if pos >= len(buf) or not buf[pos:pos + 1].isspace():
            raise FormatError(f"{path}: missing whitespace after header")
        pos += 1
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = n * dtype.itemsize
        if len(buf) - pos < need:
            raise FormatError(f"{path}: truncated payload ({len(buf) - pos} of {need} bytes)")
        samples = np.frombuffer(buf, dtype=dtype, count=n, offset=pos).astype(np.int64)
    else:
        tokens = re.sub(rb"#[^\n\r]*", b" ", buf[pos:]).split()
        if len(tokens) < n:
            raise FormatError(f"{path}: truncated payload ({len(tokens)} of {n} samples)")
        try:
            samples = np.array([int(t) for t in tokens[:n]], dtype=np.int64)
        except ValueError as exc:
            raise FormatError(f"{path}: non-numeric sample") from exc

    if samples.size and (samples.min() < 0 or samples.max() > maxval):
        raise FormatError(f"{path}: sample exceeds maxval {maxval}")
    if channels == 3:
        samples = samples.reshape(-1, 3).sum(axis=1) // 3
    gray = samples * 255 // maxval
    return GrayImage(gray.reshape(height, width))


def load_image(path) -> GrayImage:
    with open(path, "rb") as fh:
        return parse_pnm(fh.read(), path)


def encode_pgm(img: GrayImage, binary: bool = True) -> bytes:
    head = f"{'P5' if binary else 'P2'}\n{img.width} {img.height}\n255\n".encode()
    if binary:
        return head + img.pixels.tobytes()
    rows = (" ".join(str(v) for v in row) for row in img.pixels.tolist())
    return head + ("\n".join(rows) + "\n").encode()


def encode_ppm(rgb: np.ndarray) -> bytes:
    rgb = np.asarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise InvalidParameter(f"expected an (h, w, 3) array, got {rgb.shape}")
    h, w, _ = rgb.shape
    return f"P6\n{w} {h}\n255\n".encode() + rgb.tobytes()


def write_pgm(path, img: GrayImage, binary: bool = True) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_pgm(img, binary))


def write_ppm(path, rgb: np.ndarray) -> None:
    with open(os.fspath(path), "wb") as fh:
        fh.write(encode_ppm(rgb))
