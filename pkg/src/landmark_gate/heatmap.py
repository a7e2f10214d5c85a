"""Gaussian landmark heatmaps: rendering, [-1, 1] model range, peak extraction, PGM I/O."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import Point2, Shape

PGM_MAXVAL = 65535


class HeatmapFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Heatmap:
    """Row-major ``(height, width)`` grid; pixel ``(x, y)`` is ``values[y, x]``."""

    values: np.ndarray
    clipped: tuple[int, ...] = ()

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2 or 0 in v.shape:
            raise ValueError(f"heatmap grid must be 2-D and non-empty, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite heatmap value")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Heatmap):
            return NotImplemented
        return np.array_equal(self.values, other.values)


@dataclass(frozen=True)
class Candidate:
    position: Point2
    peak_value: float


def render(shape: Shape | np.ndarray, width: int, height: int, sigma: float = 1.0) -> Heatmap:
    """Max-combination of unnormalized isotropic Gaussians centred on each landmark.

    Landmarks outside the grid are clipped onto the border with a warning; their
    indices are kept in ``Heatmap.clipped``.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if width <= 0 or height <= 0:
        raise ValueError("grid size must be positive")
    pts = shape.points if isinstance(shape, Shape) else np.asarray(shape, dtype=np.float64).reshape(-1, 2)
    if isinstance(shape, Shape) and shape.unit != "px":
        raise ValueError("render expects a shape in pixel units")

    lo = np.zeros(2)
    hi = np.array([width - 1, height - 1], dtype=np.float64)
    outside = np.any((pts < lo) | (pts > hi), axis=1)
    clipped = tuple(int(i) for i in np.flatnonzero(outside))
    if clipped:
        warnings.warn(f"landmarks {clipped} outside the {width}x{height} grid, clipped", stacklevel=2)
        pts = np.clip(pts, lo, hi)

    values = np.zeros((height, width))
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    # separable exp; only a local patch per landmark matters, but the grid is small
    for x, y in pts:
        gx = np.exp(-((xs - x) ** 2) / (2 * sigma**2))
        gy = np.exp(-((ys - y) ** 2) / (2 * sigma**2))
        np.maximum(values, np.outer(gy, gx), out=values)
    return Heatmap(values, clipped)


def to_model_range(values) -> np.ndarray:
    v = values.values if isinstance(values, Heatmap) else np.asarray(values, dtype=np.float64)
    if np.any(v < 0) or np.any(v > 1):
        raise ValueError("heatmap values must lie in [0, 1]")
    return 2.0 * v - 1.0


def from_model_range(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if np.any(v < -1) or np.any(v > 1):
        raise ValueError("model-range values must lie in [-1, 1]")
    return (v + 1.0) / 2.0


def extract_candidates(
    h: Heatmap, count: int, window: int = 3, min_value: float = 0.05
) -> list[Candidate]:
    """Local maxima of ``h`` under a ``(2*window+1)``-square maximum filter.

    A connected plateau of equal maxima yields one candidate (its first pixel in
    row-major order). Output is sorted by peak value, descending, then row-major.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if window < 1:
        raise ValueError("window must be >= 1")
    v = h.values
    filtered = ndimage.maximum_filter(v, size=2 * window + 1, mode="constant", cval=-np.inf)
    is_max = (v == filtered) & (v >= min_value)
    if not is_max.any():
        return []
    labels, n = ndimage.label(is_max, structure=np.ones((3, 3)))
    flat = labels.reshape(-1)
    idx = np.flatnonzero(flat)
    # first row-major pixel of each plateau component
    _, first = np.unique(flat[idx], return_index=True)
    reps = idx[first]
    rows, cols = np.divmod(reps, h.width)
    peaks = v[rows, cols]
    order = np.lexsort((reps, -peaks))[:count]
    return [Candidate(Point2(float(cols[k]), float(rows[k])), float(peaks[k])) for k in order]


def candidate_arrays(cands: list[Candidate], scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """``(K, 2)`` positions multiplied by ``scale`` and ``(K,)`` peak values."""
    if not cands:
        return np.zeros((0, 2)), np.zeros(0)
    pos = np.array([c.position for c in cands], dtype=np.float64) * scale
    peaks = np.array([c.peak_value for c in cands], dtype=np.float64)
    return pos, peaks


# 16-bit binary PGM, big-endian samples, v stored as round(v * 65535)


def quantize(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if np.any(v < 0) or np.any(v > 1):
        raise ValueError("heatmap values must lie in [0, 1] to be written")
    return np.rint(v * PGM_MAXVAL).astype(">u2")


def encode_pgm(h: Heatmap) -> bytes:
    header = f"P5\n{h.width} {h.height}\n{PGM_MAXVAL}\n".encode("ascii")
    return header + quantize(h.values).tobytes()


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise HeatmapFormatError("truncated PGM header")
    return data[start:pos], pos


def decode_pgm(data: bytes) -> Heatmap:
    magic, pos = _read_token(data, 0)
    if magic != b"P5":
        raise HeatmapFormatError(f"not a binary PGM (magic {magic!r})")
    try:
        tok, pos = _read_token(data, pos)
        width = int(tok)
        tok, pos = _read_token(data, pos)
        height = int(tok)
        tok, pos = _read_token(data, pos)
        maxval = int(tok)
    except ValueError:
        raise HeatmapFormatError("bad PGM header field") from None
    if maxval != PGM_MAXVAL:
        raise HeatmapFormatError(f"expected maxval {PGM_MAXVAL}, got {maxval}")
    pos += 1  # single whitespace before raster
    raster = data[pos:]
    expected = width * height * 2
    if len(raster) != expected:
        raise HeatmapFormatError(f"raster has {len(raster)} bytes, expected {expected}")
    ints = np.frombuffer(raster, dtype=">u2").reshape(height, width)
    return Heatmap(ints.astype(np.float64) / PGM_MAXVAL)


def write_pgm(path: str | Path, h: Heatmap) -> None:
    Path(path).write_bytes(encode_pgm(h))


def read_pgm(path: str | Path) -> Heatmap:
    return decode_pgm(Path(path).read_bytes())
