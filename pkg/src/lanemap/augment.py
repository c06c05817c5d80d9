"""Window cropping of annotations with cut-point labeling, plus the
overlapped/inclined training-augmentation sweep.

Line clipping is parametric (Liang-Barsky per segment) with boundary
intersection points snapped exactly onto the clipping edge that produced
them, so clip-created endpoints always lie on the window border.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .model import (
    EndpointKind,
    GeometryError,
    LineRecord,
    PatchFrame,
    Point2,
    VectorMap,
    world_to_patch,
)


@dataclass(frozen=True)
class ClippedRun:
    """A maximal sub-polyline inside the clip window. The flags mark which
    of its ends were created by the clip (the source polyline continues
    outside there)."""

    points: tuple[Point2, ...]
    entered_at_start: bool
    exited_at_end: bool


@dataclass(frozen=True)
class AugmentSweepConfig:
    patch_size_px: int = 896
    stride_a: int = 664
    start_a: tuple[float, float] = (448.0, 448.0)
    stride_b: int = 544
    start_b: tuple[float, float] = (1268.0, 1268.0)
    angles_deg: tuple[float, ...] = (0.0, 15.0, 30.0, 45.0, 60.0, 75.0)
    post_rotations_deg: tuple[int, ...] = (90, 180, 270)
    discard_out_of_bounds: bool = True
    use_grid_a: bool = True
    use_grid_b: bool = True

    def __post_init__(self):
        if self.stride_a <= 0 or self.stride_b <= 0:
            raise ValueError("strides must be > 0")
        if any(not (0 <= a < 90) for a in self.angles_deg):
            raise ValueError("angles must lie in [0, 90)")
        half = self.patch_size_px / 2.0
        for name, (sx, sy) in (("start_a", self.start_a), ("start_b", self.start_b)):
            if sx < half or sy < half:
                raise ValueError(f"{name} must be >= patch_size/2 per axis")


@dataclass(frozen=True)
class PatchSample:
    """One cropped window: its frame, the clipped lines in patch-local
    coordinates, and any post-rotation applied on top."""

    frame: PatchFrame
    lines: VectorMap
    post_rotation_deg: int = 0


def _clip_segment(a: Point2, b: Point2, xmin: float, ymin: float, xmax: float, ymax: float):
    """Liang-Barsky: the [t0, t1] sub-segment of a->b inside the window,
    or None. Returns (t0, t1, p0, p1) with clip points snapped onto the
    clipping edge."""
    dx = b.x - a.x
    dy = b.y - a.y
    t0, t1 = 0.0, 1.0
    edge0 = edge1 = None  # which window edge produced t0 / t1
    for edge, p, q in (
        ("xmin", -dx, a.x - xmin),
        ("xmax", dx, xmax - a.x),
        ("ymin", -dy, a.y - ymin),
        ("ymax", dy, ymax - a.y),
    ):
        if p == 0.0:
            if q < 0.0:
                return None
            continue
        r = q / p
        if p < 0.0:
            if r > t1:
                return None
            if r > t0:
                t0, edge0 = r, edge
        else:
            if r < t0:
                return None
            if r < t1:
                t1, edge1 = r, edge
    bounds = {"xmin": xmin, "xmax": xmax, "ymin": ymin, "ymax": ymax}

    def _at(t: float, edge: str | None) -> Point2:
        x = a.x + dx * t
        y = a.y + dy * t
        if edge in ("xmin", "xmax"):
            x = bounds[edge]
        elif edge in ("ymin", "ymax"):
            y = bounds[edge]
        return Point2(min(max(x, xmin), xmax), min(max(y, ymin), ymax))

    return t0, t1, _at(t0, edge0), _at(t1, edge1)


def _clip_polyline(
    points: tuple[Point2, ...], xmin: float, ymin: float, xmax: float, ymax: float
) -> list[ClippedRun]:
    runs: list[ClippedRun] = []
    cur: list[Point2] | None = None
    entered = False

    def _close(exited: bool):
        nonlocal cur
        if cur is not None and len(cur) >= 2:
            runs.append(ClippedRun(tuple(cur), entered, exited))
        cur = None

    n = len(points)
    for i in range(n - 1):
        clip = _clip_segment(points[i], points[i + 1], xmin, ymin, xmax, ymax)
        if clip is None:
            # previous vertex sat on the border and the line leaves here
            _close(exited=True)
            continue
        t0, t1, p0, p1 = clip
        if cur is None:
            entered = not (i == 0 and t0 == 0.0)
            cur = [p0]
        elif t0 > 0.0:
            # grazing re-entry: the line left at a border vertex and comes back
            _close(exited=True)
            entered = True
            cur = [p0]
        if p1 != cur[-1]:
            cur.append(p1)
        if t1 < 1.0:
            _close(exited=True)
    _close(exited=False)
    return runs


def clip_polyline_to_rect(points, width: float, height: float) -> list[ClippedRun]:
    """Clip a polyline against the window [0, width] x [0, height].

    Returns the maximal inside sub-polylines; a line fully outside yields
    an empty list. Runs with fewer than 2 distinct points are dropped.
    """
    pts = tuple(Point2(float(p[0]), float(p[1])) for p in points)
    if len(pts) < 2:
        raise GeometryError(f"polyline needs >= 2 points, got {len(pts)}")
    return _clip_polyline(pts, 0.0, 0.0, float(width), float(height))


def _polyline_px(points) -> float:
    return sum(math.hypot(b.x - a.x, b.y - a.y) for a, b in zip(points, points[1:]))


def clip_line_to_rect(
    line: LineRecord,
    xmin: float,
    ymin: float,
    xmax: float,
    ymax: float,
    min_length_px: float = 1.0,
) -> list[LineRecord]:
    """Clip one LineRecord, labeling clip-created endpoints Cut and keeping
    the original kinds on surviving natural ends. Pieces shorter than
    ``min_length_px`` are dropped (they cannot round to 2 distinct tokens)."""
    out = []
    for k, run in enumerate(_clip_polyline(line.points, xmin, ymin, xmax, ymax)):
        if _polyline_px(run.points) < min_length_px:
            continue
        out.append(
            replace(
                line,
                id=line.id if k == 0 else f"{line.id}~{k}",
                points=run.points,
                start_kind=EndpointKind.Cut if run.entered_at_start else line.start_kind,
                end_kind=EndpointKind.Cut if run.exited_at_end else line.end_kind,
            )
        )
    return out


def crop_patch(m: VectorMap, frame: PatchFrame) -> PatchSample:
    """Transform all lines into the frame, clip to the patch square and
    label cut points."""
    w, h = frame.width_px, frame.height_px
    lines: list[LineRecord] = []
    for line in m.lines:
        local = replace(line, points=tuple(world_to_patch(p, frame) for p in line.points))
        lines.extend(clip_line_to_rect(local, 0.0, 0.0, w, h))
    patch_map = VectorMap(
        lines=tuple(lines),
        width_px=w,
        height_px=h,
        meters_per_pixel=m.meters_per_pixel,
        frame_id="patch",
    )
    return PatchSample(frame=frame, lines=patch_map, post_rotation_deg=0)


_QUARTER_TURNS = {
    90: lambda dx, dy: (dy, -dx),
    180: lambda dx, dy: (-dx, -dy),
    270: lambda dx, dy: (-dy, dx),
}


def rotate_patch_sample(sample: PatchSample, deg: int) -> PatchSample:
    """Rotate all points about the patch center by a quarter turn
    (counter-clockwise in image axes). Endpoint kinds are preserved."""
    if deg not in _QUARTER_TURNS:
        raise ValueError(f"rotation must be one of 90, 180, 270; got {deg}")
    turn = _QUARTER_TURNS[deg]
    cx = sample.lines.width_px / 2.0
    cy = sample.lines.height_px / 2.0
    lines = []
    for line in sample.lines.lines:
        pts = []
        for p in line.points:
            rx, ry = turn(p.x - cx, p.y - cy)
            pts.append(Point2(cx + rx, cy + ry))
        lines.append(replace(line, points=tuple(pts)))
    return PatchSample(
        frame=sample.frame,
        lines=replace(sample.lines, lines=tuple(lines)),
        post_rotation_deg=(sample.post_rotation_deg + deg) % 360,
    )


def footprint_half_extent(patch_size_px: float, angle_deg: float) -> float:
    """Half extent per axis of the rotated square's axis-aligned bounding box."""
    th = math.radians(angle_deg)
    return (patch_size_px / 2.0) * (abs(math.cos(th)) + abs(math.sin(th)))


def generate_augmentation_sweep(
    parent_width_px: float, parent_height_px: float, cfg: AugmentSweepConfig = AugmentSweepConfig()
) -> list[PatchFrame]:
    """Enumerate candidate frames on both stride grids crossed with all
    inclination angles; a frame is kept iff its rotated footprint lies
    fully inside the parent. Order is deterministic: grid a, then grid b;
    within a grid each angle in config order, centers row-major."""
    W, H = float(parent_width_px), float(parent_height_px)
    frames: list[PatchFrame] = []
    grids = []
    if cfg.use_grid_a:
        grids.append((cfg.start_a, cfg.stride_a))
    if cfg.use_grid_b:
        grids.append((cfg.start_b, cfg.stride_b))
    for (sx, sy), stride in grids:
        for angle in cfg.angles_deg:
            half = footprint_half_extent(cfg.patch_size_px, angle)
            cy = sy
            while cy <= H:
                cx = sx
                while cx <= W:
                    keep = (
                        cx - half >= 0.0
                        and cy - half >= 0.0
                        and cx + half <= W
                        and cy + half <= H
                    )
                    if keep or not cfg.discard_out_of_bounds:
                        frames.append(
                            PatchFrame(
                                center=Point2(cx, cy),
                                angle_deg=angle,
                                width_px=cfg.patch_size_px,
                                height_px=cfg.patch_size_px,
                                parent_width_px=W,
                                parent_height_px=H,
                            )
                        )
                    cx += stride
                cy += stride
    return frames
