"""Equidistant resampling of line vectors and canonical map ordering.

These are the two normalization steps applied to a map before it is
serialized to tokens. Both are pure functions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .model import GeometryError, LineRecord, Point2, VectorMap

_EPS = 1e-9


@dataclass(frozen=True)
class SamplingConfig:
    """Spacing of the equidistant sampling grid, in meters."""

    interval_m: float = 6.0
    keep_endpoints: bool = True

    def __post_init__(self):
        if self.interval_m <= 0:
            raise ValueError(f"interval_m must be > 0, got {self.interval_m}")


def resample_equidistant(
    line: LineRecord,
    cfg: SamplingConfig = SamplingConfig(),
    mpp: float = 0.15,
) -> LineRecord:
    """Resample a polyline at fixed arc-length spacing.

    Output points lie on the input polyline at arc positions 0, s, 2s, ...
    (s = interval_m / mpp pixels). With ``keep_endpoints`` the original last
    point is appended verbatim, so the final gap may be shorter than s but
    is never empty. Attributes are unchanged.
    """
    pts = line.points
    if len(pts) < 2:
        raise GeometryError(f"line {line.id!r}: needs >= 2 points")
    spacing = cfg.interval_m / mpp

    cum = [0.0]
    for a, b in zip(pts, pts[1:]):
        cum.append(cum[-1] + math.hypot(b.x - a.x, b.y - a.y))
    total = cum[-1]

    out = [pts[0]]
    seg = 0
    target = spacing
    limit = total - _EPS if cfg.keep_endpoints else total + _EPS
    while target < limit:
        while seg + 2 < len(cum) and cum[seg + 1] < target:
            seg += 1
        seg_len = cum[seg + 1] - cum[seg]
        t = min((target - cum[seg]) / seg_len, 1.0)
        a, b = pts[seg], pts[seg + 1]
        out.append(Point2(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t))
        target += spacing
    if cfg.keep_endpoints or len(out) < 2:
        out.append(pts[-1])
    return replace(line, points=tuple(out))


def reorder_lines(m: VectorMap) -> VectorMap:
    """Sort lines by the distance of their first point to the frame origin.

    The sort is stable, so exact ties keep the input order; line contents
    are untouched.
    """
    ordered = sorted(m.lines, key=lambda ln: math.hypot(ln.points[0].x, ln.points[0].y))
    return replace(m, lines=tuple(ordered))
