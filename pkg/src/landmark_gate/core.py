"""Geometry primitives, wrist-width normalization and annotation file I/O."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

UNITS = ("mm", "px")


class AnnotationError(ValueError):
    """Malformed annotation file; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class LandmarkCountMismatch(AnnotationError):
    pass


class DegenerateShape(ValueError):
    pass


class Point2(NamedTuple):
    x: float
    y: float


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Shape:
    """Ordered landmarks as an ``(L, 2)`` float array; row ``i`` is landmark ``i``."""

    points: np.ndarray
    unit: str = "mm"

    def __post_init__(self):
        pts = _frozen(self.points)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError(f"points must have shape (L, 2), got {pts.shape}")
        if pts.shape[0] < 2:
            raise ValueError("a shape needs at least 2 landmarks")
        if not np.all(np.isfinite(pts)):
            raise ValueError("non-finite landmark coordinate")
        if self.unit not in UNITS:
            raise ValueError(f"unit must be one of {UNITS}, got {self.unit!r}")
        object.__setattr__(self, "points", pts)

    @property
    def L(self) -> int:
        return self.points.shape[0]

    def __len__(self) -> int:
        return self.L

    def __getitem__(self, i: int) -> Point2:
        return Point2(*map(float, self.points[i]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Shape):
            return NotImplemented
        return self.unit == other.unit and np.array_equal(self.points, other.points)

    def vector(self) -> np.ndarray:
        """Interleaved ``(x0, y0, x1, y1, ...)`` vector of length ``2L``."""
        return self.points.reshape(-1).copy()

    def with_points(self, points) -> Shape:
        return Shape(points, self.unit)


@dataclass(frozen=True)
class NormalizationSpec:
    wrist_index_a: int = 0
    wrist_index_b: int = 1
    target_width: float = 50.0

    def __post_init__(self):
        if self.wrist_index_a == self.wrist_index_b:
            raise ValueError("wrist indices must be distinct")
        if min(self.wrist_index_a, self.wrist_index_b) < 0:
            raise ValueError("wrist indices must be non-negative")
        if not self.target_width > 0:
            raise ValueError("target_width must be positive")

    def check(self, L: int) -> None:
        if max(self.wrist_index_a, self.wrist_index_b) >= L:
            raise ValueError(f"wrist indices out of range for L={L}")


@dataclass(frozen=True)
class Dataset:
    shapes: tuple[Shape, ...]
    L: int
    ids: tuple[str, ...] = ()
    image_size: tuple[int, int] | None = None
    unit: str = field(default="mm")

    def __post_init__(self):
        object.__setattr__(self, "shapes", tuple(self.shapes))
        ids = tuple(self.ids) or tuple(str(i) for i in range(len(self.shapes)))
        if len(ids) != len(self.shapes):
            raise ValueError("ids and shapes differ in length")
        object.__setattr__(self, "ids", ids)
        for s in self.shapes:
            if s.L != self.L:
                raise LandmarkCountMismatch(f"shape has {s.L} landmarks, expected {self.L}")
            if s.unit != self.unit:
                raise ValueError("all shapes in a dataset must share a unit")

    def __len__(self) -> int:
        return len(self.shapes)

    def stack(self) -> np.ndarray:
        """``(n, L, 2)`` array of all shapes."""
        if not self.shapes:
            return np.zeros((0, self.L, 2))
        return np.stack([s.points for s in self.shapes])


def normalize_to_wrist(shape: Shape, spec: NormalizationSpec) -> tuple[Shape, float]:
    """Scale ``shape`` about the origin so the wrist pair is ``target_width`` apart."""
    spec.check(shape.L)
    a = shape.points[spec.wrist_index_a]
    b = shape.points[spec.wrist_index_b]
    width = float(np.hypot(*(a - b)))
    if width == 0.0:
        raise DegenerateShape("wrist landmarks coincide")
    scale = spec.target_width / width
    return Shape(shape.points * scale, "mm"), scale


def pixels_to_mm(shape: Shape, scale: float) -> Shape:
    if not scale > 0:
        raise ValueError("scale must be positive")
    return Shape(shape.points * scale, "mm")


def mm_to_pixels(shape: Shape, scale: float) -> Shape:
    if not scale > 0:
        raise ValueError("scale must be positive")
    return Shape(shape.points / scale, "px")


def pairwise_distances(points: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - points[None, :, :]
    return np.hypot(diff[..., 0], diff[..., 1])


# ---------------------------------------------------------------------------
# annotation text format
#
#   L=<count> unit=<mm|px> [size=<W>x<H>]
#   <id> <x0> <y0> <x1> <y1> ...


def _parse_header(line: str) -> dict[str, str]:
    fields = {}
    for token in line.split():
        key, sep, value = token.partition("=")
        if not sep:
            raise AnnotationError(f"bad header token {token!r}", 1)
        fields[key] = value
    if "L" not in fields or "unit" not in fields:
        raise AnnotationError("header must define L= and unit=", 1)
    return fields


def parse_annotation_text(text: str, L: int | None = None) -> Dataset:
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise AnnotationError("missing header", 1)
    header = _parse_header(lines[0])
    try:
        count = int(header["L"])
    except ValueError:
        raise AnnotationError(f"bad landmark count {header['L']!r}", 1) from None
    unit = header["unit"]
    if unit not in UNITS:
        raise AnnotationError(f"unknown unit {unit!r}", 1)
    if L is not None and count != L:
        raise LandmarkCountMismatch(f"file declares L={count}, expected {L}", 1)
    size = None
    if "size" in header:
        try:
            w, h = header["size"].lower().split("x")
            size = (int(w), int(h))
        except ValueError:
            raise AnnotationError(f"bad size {header['size']!r}", 1) from None

    ids, shapes = [], []
    for lineno, raw in enumerate(lines[1:], start=2):
        tokens = raw.split()
        if not tokens or tokens[0].startswith("#"):
            continue
        rec_id, coords = tokens[0], tokens[1:]
        if len(coords) % 2:
            raise AnnotationError("odd number of coordinates", lineno)
        if len(coords) // 2 != count:
            raise LandmarkCountMismatch(
                f"record {rec_id!r} has {len(coords) // 2} landmarks, expected {count}", lineno
            )
        try:
            values = [float(c) for c in coords]
        except ValueError as exc:
            raise AnnotationError(str(exc), lineno) from None
        if not all(math.isfinite(v) for v in values):
            raise AnnotationError("non-finite coordinate", lineno)
        ids.append(rec_id)
        shapes.append(Shape(np.reshape(values, (count, 2)), unit))
    return Dataset(tuple(shapes), count, tuple(ids), size, unit)


def parse_annotations(path: str | Path, L: int | None = None) -> Dataset:
    return parse_annotation_text(Path(path).read_text(), L)


def format_annotations(
    shapes: Sequence[Shape],
    ids: Sequence[str] | None = None,
    image_size: tuple[int, int] | None = None,
) -> str:
    if not shapes:
        raise ValueError("nothing to serialize")
    L, unit = shapes[0].L, shapes[0].unit
    ids = list(ids) if ids is not None else [str(i) for i in range(len(shapes))]
    header = f"L={L} unit={unit}"
    if image_size is not None:
        header += f" size={image_size[0]}x{image_size[1]}"
    out = [header]
    for rec_id, s in zip(ids, shapes):
        # repr() gives shortest round-trip decimal
        out.append(" ".join([rec_id] + [repr(float(v)) for v in s.points.reshape(-1)]))
    return "\n".join(out) + "\n"


def write_annotations(path: str | Path, dataset: Dataset) -> None:
    Path(path).write_text(format_annotations(dataset.shapes, dataset.ids, dataset.image_size))
