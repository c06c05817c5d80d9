"""GPS<->pixel linking (Web Mercator), ground-truth cropping to the
forward perception field of a vehicle pose, PV frame subsampling and the
prompt-template builder.

Heading convention: 0 degrees points image-up (-y), increasing clockwise,
normalized to [0, 360).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Sequence, TypeVar

from .augment import clip_line_to_rect
from .model import LineRecord, Point2, VectorMap

MERCATOR_LAT_LIMIT = 85.051128
TILE_SIZE = 256

T = TypeVar("T")


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not -MERCATOR_LAT_LIMIT <= self.lat <= MERCATOR_LAT_LIMIT:
            raise ValueError(f"latitude {self.lat} outside Web-Mercator bounds")
        if not -180.0 <= self.lon < 180.0:
            raise ValueError(f"longitude {self.lon} outside [-180, 180)")


@dataclass(frozen=True)
class PvPose:
    """A ground-level camera pose in parent-frame pixels."""

    position: Point2
    heading_deg: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "heading_deg", float(self.heading_deg) % 360.0)


@dataclass(frozen=True)
class PvFieldSpec:
    """Forward perception field: ahead_m in front of the pose, width_m
    across it."""

    ahead_m: float = 60.0
    width_m: float = 30.0

    def __post_init__(self):
        if self.ahead_m <= 0 or self.width_m <= 0:
            raise ValueError("field extents must be > 0")


def _world_pixels(zoom: int) -> float:
    if not 0 <= zoom <= 23:
        raise ValueError(f"zoom {zoom} outside [0, 23]")
    return float(TILE_SIZE * (1 << zoom))


def latlon_to_pixel(g: GeoPoint, zoom: int) -> Point2:
    """Global Web-Mercator pixel coordinates of a lat/lon at a zoom level."""
    n = _world_pixels(zoom)
    phi = math.radians(g.lat)
    x = (g.lon + 180.0) / 360.0 * n
    y = (1.0 - math.log(math.tan(phi) + 1.0 / math.cos(phi)) / math.pi) / 2.0 * n
    return Point2(x, y)


def pixel_to_latlon(p: Point2, zoom: int) -> GeoPoint:
    """Exact inverse of :func:`latlon_to_pixel`."""
    n = _world_pixels(zoom)
    if not (0.0 <= p.x <= n and 0.0 <= p.y <= n):
        raise ValueError(f"pixel {p} outside the zoom-{zoom} extent [0, {n}]")
    lon = p.x / n * 360.0 - 180.0
    lat = math.degrees(math.atan(math.sinh(math.pi * (1.0 - 2.0 * p.y / n))))
    return GeoPoint(lat=lat, lon=lon)


def pv_field_crop(m: VectorMap, pose: PvPose, spec: PvFieldSpec = PvFieldSpec()) -> VectorMap:
    """Clip the map to the pose's forward field and express it pose-locally.

    The pose sits at the bottom-center of the output frame with its heading
    pointing up; clip-created endpoints get kind Cut.
    """
    mpp = m.meters_per_pixel
    field_w = spec.width_m / mpp
    field_h = spec.ahead_m / mpp
    h = math.radians(pose.heading_deg)
    fx, fy = math.sin(h), -math.cos(h)  # forward
    rx, ry = -fy, fx  # right-hand side

    def to_local(p: Point2) -> Point2:
        dx = p.x - pose.position.x
        dy = p.y - pose.position.y
        return Point2(dx * rx + dy * ry + field_w / 2.0, field_h - (dx * fx + dy * fy))

    lines: list[LineRecord] = []
    for line in m.lines:
        local = replace(line, points=tuple(to_local(p) for p in line.points))
        lines.extend(clip_line_to_rect(local, 0.0, 0.0, field_w, field_h))
    return VectorMap(
        lines=tuple(lines),
        width_px=field_w,
        height_px=field_h,
        meters_per_pixel=mpp,
        frame_id="pose-local",
    )


def sample_pv_frames(frames: Sequence[T], max_n: int = 10) -> list[T]:
    """Uniformly subsample an ordered frame list down to at most max_n,
    always keeping the first and last frames."""
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    n = len(frames)
    if n <= max_n:
        return list(frames)
    if max_n == 1:
        return [frames[0]]
    indices = sorted({math.floor(k * (n - 1) / (max_n - 1) + 0.5) for k in range(max_n)})
    return [frames[i] for i in indices]


class PromptMode(enum.Enum):
    BEV_ONLY = "bev"
    PV_ONLY = "pv"
    BEV_PV = "bev+pv"
    BEV_TEXT_ENDPOINTS = "bev+text-endpoints"
    BEV_TEXT_TRACE = "bev+text-trace"
    BEV_PV_TEXT = "bev+pv+text"


def _fmt_int(v: float) -> int:
    return math.floor(float(v) + 0.5)


def _fmt_angle(v: float) -> int:
    return _fmt_int(v) % 360


def _pv_entries(pv_meta) -> str:
    parts = [
        f"{{<pv frame>, point: [{_fmt_int(x)},{_fmt_int(y)}], angle: {_fmt_angle(a)}}}"
        for x, y, a in pv_meta
    ]
    return "[" + ", ".join(parts) + "]"


def _trace_entries(trace) -> str:
    parts = [
        f"{{point: [{_fmt_int(x)},{_fmt_int(y)}], angle: {_fmt_angle(a)}}}" for x, y, a in trace
    ]
    return "[" + ",".join(parts) + "]"


def build_prompt(
    mode: PromptMode,
    pv_meta: Sequence[tuple[float, float, float]] | None = None,
    endpoints: tuple[tuple[float, float], tuple[float, float]] | None = None,
    trace: Sequence[tuple[float, float, float]] | None = None,
) -> str:
    """Emit the generation prompt for an input-modality combination,
    byte-exact including punctuation.

    pv_meta and trace entries are (x, y, heading_deg) triples; endpoints is
    the ((x1, y1), (x2, y2)) pair of the requested road. Numbers render as
    half-up-rounded integers, headings normalized to 0..359.
    """
    if mode is PromptMode.BEV_ONLY:
        return "<image>Please construct the entire road map in the satellite image."
    if mode is PromptMode.PV_ONLY:
        if not pv_meta:
            raise ValueError("PV-only prompt needs pv_meta")
        return (
            "Please construct the road map referring to the perspective frames: "
            + _pv_entries(pv_meta)
        )
    if mode is PromptMode.BEV_PV:
        if not pv_meta:
            raise ValueError("BEV+PV prompt needs pv_meta")
        return (
            "<image>Please construct the entire road map in the satellite image, "
            "referring to the perspective frames: " + _pv_entries(pv_meta)
        )
    if mode is PromptMode.BEV_TEXT_ENDPOINTS:
        if endpoints is None:
            raise ValueError("BEV+text(endpoints) prompt needs endpoints")
        (x1, y1), (x2, y2) = endpoints
        return (
            f"<image>Please construct the road map from ({_fmt_int(x1)},{_fmt_int(y1)}) "
            f"to ({_fmt_int(x2)},{_fmt_int(y2)}) in the satellite image."
        )
    if mode is PromptMode.BEV_TEXT_TRACE:
        if not trace:
            raise ValueError("BEV+text(trace) prompt needs trace points")
        return (
            "<image>Please construct the target road map in the satellite image, "
            "around the trace points: " + _trace_entries(trace)
        )
    if mode is PromptMode.BEV_PV_TEXT:
        if not pv_meta:
            raise ValueError("BEV+PV+text prompt needs pv_meta")
        return (
            "<image>Please construct the target road map in the satellite image, "
            "referring to the perspective frames and trace points: " + _pv_entries(pv_meta)
        )
    raise ValueError(f"unknown prompt mode {mode!r}")
