"""Shared scene builders, oracles and comparison helpers for the test suite."""
from __future__ import annotations

import math
import random

import numpy as np

from lanemap.augment import AugmentSweepConfig
from lanemap.model import EndpointKind, LineCategory, LineRecord, LineType, Point2, VectorMap

CATS = tuple(LineCategory)
TYPES = tuple(LineType)
KINDS = tuple(EndpointKind)


def line_fields(ln: LineRecord):
    """The fields that survive the token wire format, for comparisons."""
    return (
        tuple((p.x, p.y) for p in ln.points),
        ln.category,
        ln.line_type,
        ln.start_kind,
        ln.end_kind,
    )


def random_valid_map(
    rnd: random.Random,
    max_lines: int = 50,
    max_points: int = 100,
    max_coord: int = 895,
) -> VectorMap:
    """A random map with integer coordinates (rounding is lossless) and no
    consecutive duplicate points."""
    lines = []
    for i in range(rnd.randint(0, max_lines)):
        n = rnd.randint(2, max_points)
        pts: list[Point2] = []
        while len(pts) < n:
            p = Point2(float(rnd.randint(0, max_coord)), float(rnd.randint(0, max_coord)))
            if not pts or p != pts[-1]:
                pts.append(p)
        lines.append(
            LineRecord(
                id=f"line{i}",
                points=tuple(pts),
                category=rnd.choice(CATS),
                line_type=rnd.choice(TYPES),
                start_kind=rnd.choice(KINDS),
                end_kind=rnd.choice(KINDS),
            )
        )
    return VectorMap(lines=tuple(lines), width_px=max_coord + 1, height_px=max_coord + 1)


def random_polyline(rnd: random.Random, n_points: int | None = None, scale: float = 120.0) -> LineRecord:
    """A random-walk polyline with float coordinates."""
    n = n_points or rnd.randint(2, 12)
    x, y = rnd.uniform(0, 500), rnd.uniform(0, 500)
    pts = [Point2(x, y)]
    while len(pts) < n:
        ang = rnd.uniform(0, 2 * math.pi)
        step = rnd.uniform(5.0, scale)
        x += step * math.cos(ang)
        y += step * math.sin(ang)
        pts.append(Point2(x, y))
    return LineRecord(id="rw", points=tuple(pts), category=LineCategory.LaneLine)


def axis_scene(
    width: int = 4096,
    height: int = 4096,
    h_spacing: int = 36,
    v_spacing: int = 40,
    margin: int = 16,
) -> VectorMap:
    """Axis-aligned integer-coordinate scene: horizontal and vertical lines
    spanning nearly the full frame. Integer coords keep token rounding
    lossless end to end; spacing exceeds the 30 px chamfer window so only
    genuine neighbor pairs survive bbox pruning."""
    lines = []
    k = 0
    for y in range(margin + 48, height - margin, h_spacing):
        lines.append(
            LineRecord(
                id=f"h{k}",
                points=(Point2(margin + 1, y), Point2(width - margin - 1, y)),
                category=CATS[k % 3],
                line_type=TYPES[k % 5],
            )
        )
        k += 1
    for x in range(margin + 68, width - margin, v_spacing):
        lines.append(
            LineRecord(
                id=f"v{k}",
                points=(Point2(x, margin + 7), Point2(x, height - margin - 7)),
                category=CATS[k % 3],
                line_type=TYPES[k % 5],
            )
        )
        k += 1
    return VectorMap(lines=tuple(lines), width_px=width, height_px=height)


def brute_force_sweep_count(W: float, H: float, cfg: AugmentSweepConfig) -> int:
    """Independent sweep oracle: enumerate grid centers generously and test
    the rotated square's corner AABB against the parent bounds."""
    count = 0
    grids = []
    if cfg.use_grid_a:
        grids.append((cfg.start_a, cfg.stride_a))
    if cfg.use_grid_b:
        grids.append((cfg.start_b, cfg.stride_b))
    half = cfg.patch_size_px / 2.0
    for (sx, sy), stride in grids:
        for angle in cfg.angles_deg:
            th = math.radians(angle)
            rot = np.array([[math.cos(th), math.sin(th)], [-math.sin(th), math.cos(th)]])
            corners = np.array([[-half, -half], [half, -half], [half, half], [-half, half]])
            rc = corners @ rot.T
            for j in range(200):
                cy = sy + j * stride
                if cy > H:
                    break
                for i in range(200):
                    cx = sx + i * stride
                    if cx > W:
                        break
                    pts = rc + [cx, cy]
                    if (
                        pts[:, 0].min() >= 0
                        and pts[:, 1].min() >= 0
                        and pts[:, 0].max() <= W
                        and pts[:, 1].max() <= H
                    ):
                        count += 1
    return count


def angled_scene(seed: int, size: int = 1792) -> VectorMap:
    """Gently angled long lines crossing patch borders; used for the noise
    monotonicity runs."""
    rnd = random.Random(seed)
    lines = []
    k = 0
    step = size // 13
    for i in range(12):
        x0 = rnd.uniform(20, 300)
        y0 = step * i + rnd.uniform(30, 90)
        slope = rnd.uniform(-0.12, 0.12)
        pts = [Point2(x0 + t * 110, y0 + t * 110 * slope) for t in range(16)]
        pts = [p for p in pts if 0 <= p.x <= size and 0 <= p.y <= size]
        if len(pts) >= 2:
            lines.append(LineRecord(id=f"a{k}", points=tuple(pts), category=CATS[k % 3]))
            k += 1
    for i in range(12):
        y0 = rnd.uniform(20, 300)
        x0 = step * i + rnd.uniform(30, 90)
        slope = rnd.uniform(-0.12, 0.12)
        pts = [Point2(x0 + t * 110 * slope, y0 + t * 110) for t in range(16)]
        pts = [p for p in pts if 0 <= p.x <= size and 0 <= p.y <= size]
        if len(pts) >= 2:
            lines.append(LineRecord(id=f"a{k}", points=tuple(pts), category=CATS[k % 3]))
            k += 1
    return VectorMap(lines=tuple(lines), width_px=size, height_px=size)
