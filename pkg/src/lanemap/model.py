"""Domain types, coordinate frames and the affine world<->patch transforms.

All coordinates are continuous pixels in image convention: x grows right,
y grows down. Angles are degrees, counter-clockwise as seen on screen
(i.e. counter-clockwise in image axes); every module shares this convention.
All types are immutable values after construction and safe to share
between threads.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Iterable, NamedTuple

DEFAULT_METERS_PER_PIXEL = 0.15  # zoom-20 ground resolution


class GeometryError(ValueError):
    """Raised for invalid geometric input (too few points, NaN, ...)."""


class SchemaError(ValueError):
    """Raised when an annotation document violates the JSON schema.

    `path` locates the offending value, e.g. "lines[3].points[0]".
    """

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class Point2(NamedTuple):
    """A 2D point in pixels. Containers validate finiteness on construction."""

    x: float
    y: float


class LineCategory(enum.Enum):
    Curb = "Curb"
    LaneLine = "LaneLine"
    VirtualLine = "VirtualLine"


class LineType(enum.Enum):
    Solid = "Solid"
    ThickSolid = "ThickSolid"
    Dashed = "Dashed"
    ShortDashed = "ShortDashed"
    Other = "Other"


class EndpointKind(enum.Enum):
    """Whether a line endpoint is a natural terminus or was produced by
    cutting the line at a window border. The position in the point list
    already encodes start vs end, so only natural-vs-cut is stored."""

    Natural = "Natural"
    Cut = "Cut"


def _as_points(raw: Iterable) -> tuple[Point2, ...]:
    pts = []
    for p in raw:
        if isinstance(p, Point2):
            pts.append(Point2(float(p.x), float(p.y)))
        else:
            x, y = p
            pts.append(Point2(float(x), float(y)))
    return tuple(pts)


@dataclass(frozen=True)
class LineRecord:
    """One lane-line instance: an ordered point list plus its attributes."""

    id: str
    points: tuple[Point2, ...]
    category: LineCategory
    line_type: LineType = LineType.Solid
    start_kind: EndpointKind = EndpointKind.Natural
    end_kind: EndpointKind = EndpointKind.Natural
    score: float | None = None

    def __post_init__(self):
        pts = _as_points(self.points)
        object.__setattr__(self, "points", pts)
        if len(pts) < 2:
            raise GeometryError(f"line {self.id!r}: needs >= 2 points, got {len(pts)}")
        prev = None
        for i, p in enumerate(pts):
            if not (math.isfinite(p.x) and math.isfinite(p.y)):
                raise GeometryError(f"line {self.id!r}: non-finite point at index {i}")
            if prev is not None and p == prev:
                raise GeometryError(
                    f"line {self.id!r}: consecutive duplicate point at index {i}"
                )
            prev = p
        if self.score is not None and not (0.0 <= self.score <= 1.0):
            raise ValueError(f"line {self.id!r}: score {self.score} outside [0, 1]")

    def reversed_(self) -> "LineRecord":
        """The same line walked in the opposite direction (endpoint kinds swap)."""
        return replace(
            self,
            points=tuple(reversed(self.points)),
            start_kind=self.end_kind,
            end_kind=self.start_kind,
        )


@dataclass(frozen=True)
class VectorMap:
    """A set of lane lines in a named coordinate frame."""

    lines: tuple[LineRecord, ...]
    width_px: float
    height_px: float
    meters_per_pixel: float = DEFAULT_METERS_PER_PIXEL
    frame_id: str = "world"

    def __post_init__(self):
        object.__setattr__(self, "lines", tuple(self.lines))
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError(f"frame extent must be positive, got {self.width_px}x{self.height_px}")
        if self.meters_per_pixel <= 0:
            raise ValueError(f"meters_per_pixel must be > 0, got {self.meters_per_pixel}")


@dataclass(frozen=True)
class PatchFrame:
    """An oriented square window into a parent image.

    `center` is in parent-frame pixels, `angle_deg` the window inclination,
    counter-clockwise in image axes, normalized to [0, 360).
    """

    center: Point2
    angle_deg: float = 0.0
    width_px: float = 896.0
    height_px: float = 896.0
    parent_width_px: float = 0.0
    parent_height_px: float = 0.0

    def __post_init__(self):
        cx, cy = float(self.center[0]), float(self.center[1])
        if not (math.isfinite(cx) and math.isfinite(cy)):
            raise GeometryError("patch center must be finite")
        object.__setattr__(self, "center", Point2(cx, cy))
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError("patch extent must be positive")
        object.__setattr__(self, "angle_deg", float(self.angle_deg) % 360.0)


def world_to_patch(p: Point2, f: PatchFrame) -> Point2:
    """Map a parent-frame point into patch-local coordinates.

    The result may lie outside the patch rectangle; clipping is the
    caller's job.
    """
    th = math.radians(f.angle_deg)
    c, s = math.cos(th), math.sin(th)
    dx = p[0] - f.center.x
    dy = p[1] - f.center.y
    return Point2(
        dx * c - dy * s + f.width_px / 2.0,
        dx * s + dy * c + f.height_px / 2.0,
    )


def patch_to_world(p: Point2, f: PatchFrame) -> Point2:
    """Exact inverse of :func:`world_to_patch`."""
    th = math.radians(f.angle_deg)
    c, s = math.cos(th), math.sin(th)
    ux = p[0] - f.width_px / 2.0
    uy = p[1] - f.height_px / 2.0
    return Point2(
        ux * c + uy * s + f.center.x,
        -ux * s + uy * c + f.center.y,
    )


def transform_points(points: Iterable[Point2], f: PatchFrame, *, inverse: bool = False) -> tuple[Point2, ...]:
    fn = patch_to_world if inverse else world_to_patch
    return tuple(fn(p, f) for p in points)


def polyline_length(points: Iterable[Point2], mpp: float) -> float:
    """Total polyline length in meters (sum of segment lengths times mpp)."""
    pts = list(points)
    if len(pts) < 2:
        raise GeometryError(f"polyline needs >= 2 points, got {len(pts)}")
    total = 0.0
    for a, b in zip(pts, pts[1:]):
        total += math.hypot(b[0] - a[0], b[1] - a[1])
    return total * mpp


# --- annotation JSON schema -------------------------------------------------
#
# {"width": int, "height": int, "mpp": float,
#  "lines": [{"id": str, "points": [[x, y], ...],
#             "category": "Curb|LaneLine|VirtualLine",
#             "line_type": "Solid|ThickSolid|Dashed|ShortDashed|Other",
#             "start": "natural|cut", "end": "natural|cut",
#             "score": float (optional)}]}

_KIND_TO_JSON = {EndpointKind.Natural: "natural", EndpointKind.Cut: "cut"}
_KIND_FROM_JSON = {v: k for k, v in _KIND_TO_JSON.items()}


def vector_map_to_json(m: VectorMap) -> dict:
    lines = []
    for ln in m.lines:
        obj = {
            "id": ln.id,
            "points": [[p.x, p.y] for p in ln.points],
            "category": ln.category.value,
            "line_type": ln.line_type.value,
            "start": _KIND_TO_JSON[ln.start_kind],
            "end": _KIND_TO_JSON[ln.end_kind],
        }
        if ln.score is not None:
            obj["score"] = ln.score
        lines.append(obj)
    return {
        "width": m.width_px,
        "height": m.height_px,
        "mpp": m.meters_per_pixel,
        "lines": lines,
    }


def _require(doc: dict, key: str, path: str):
    if key not in doc:
        raise SchemaError(f"{path}.{key}" if path else key, "missing required field")
    return doc[key]


def _as_number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(path, f"expected a number, got {type(value).__name__}")
    return float(value)


def vector_map_from_json(doc: dict, frame_id: str = "world") -> VectorMap:
    """Parse the annotation schema; raises SchemaError with a JSON path."""
    if not isinstance(doc, dict):
        raise SchemaError("", f"expected an object, got {type(doc).__name__}")
    width = _as_number(_require(doc, "width", ""), "width")
    height = _as_number(_require(doc, "height", ""), "height")
    mpp = _as_number(_require(doc, "mpp", ""), "mpp")
    raw_lines = _require(doc, "lines", "")
    if not isinstance(raw_lines, list):
        raise SchemaError("lines", "expected a list")
    lines = []
    for i, raw in enumerate(raw_lines):
        path = f"lines[{i}]"
        if not isinstance(raw, dict):
            raise SchemaError(path, "expected an object")
        lid = _require(raw, "id", path)
        if not isinstance(lid, str):
            raise SchemaError(f"{path}.id", "expected a string")
        raw_pts = _require(raw, "points", path)
        if not isinstance(raw_pts, list):
            raise SchemaError(f"{path}.points", "expected a list")
        pts = []
        for j, rp in enumerate(raw_pts):
            if not (isinstance(rp, (list, tuple)) and len(rp) == 2):
                raise SchemaError(f"{path}.points[{j}]", "expected an [x, y] pair")
            pts.append(
                Point2(
                    _as_number(rp[0], f"{path}.points[{j}][0]"),
                    _as_number(rp[1], f"{path}.points[{j}][1]"),
                )
            )
        cat_name = _require(raw, "category", path)
        try:
            category = LineCategory(cat_name)
        except ValueError:
            raise SchemaError(f"{path}.category", f"unknown category {cat_name!r}") from None
        type_name = raw.get("line_type", "Solid")
        try:
            line_type = LineType(type_name)
        except ValueError:
            raise SchemaError(f"{path}.line_type", f"unknown line type {type_name!r}") from None
        kinds = {}
        for end in ("start", "end"):
            raw_kind = raw.get(end, "natural")
            if raw_kind not in _KIND_FROM_JSON:
                raise SchemaError(f"{path}.{end}", f"expected 'natural' or 'cut', got {raw_kind!r}")
            kinds[end] = _KIND_FROM_JSON[raw_kind]
        score = raw.get("score")
        if score is not None:
            score = _as_number(score, f"{path}.score")
            if not 0.0 <= score <= 1.0:
                raise SchemaError(f"{path}.score", f"score {score} outside [0, 1]")
        try:
            lines.append(
                LineRecord(
                    id=lid,
                    points=tuple(pts),
                    category=category,
                    line_type=line_type,
                    start_kind=kinds["start"],
                    end_kind=kinds["end"],
                    score=score,
                )
            )
        except GeometryError as exc:
            raise SchemaError(path, str(exc)) from None
    try:
        return VectorMap(
            lines=tuple(lines),
            width_px=width,
            height_px=height,
            meters_per_pixel=mpp,
            frame_id=frame_id,
        )
    except ValueError as exc:
        raise SchemaError("", str(exc)) from None
