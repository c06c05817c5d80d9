"""Evaluation metric suite: rasterized mIoU, Chamfer AP, Mask AP and the
pseudo-score used to rank generated lines.

Lines are rasterized as 6-px-wide strokes (3 px each side of the
centerline, round caps and joins) by thresholding the exact distance
field, sampled at pixel centers (col + 0.5, row + 0.5). Chamfer distance
is the symmetric mean of nearest-sample distances over 1-px dense
resamplings of both polylines.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .model import GeometryError, LineCategory, LineRecord, VectorMap
from .sampling import SamplingConfig, resample_equidistant


@dataclass(frozen=True)
class RasterSpec:
    width_px: int
    height_px: int
    line_width_px: int = 6

    def __post_init__(self):
        if self.line_width_px < 1:
            raise ValueError("line_width_px must be >= 1")
        if self.width_px < 1 or self.height_px < 1:
            raise ValueError("raster extent must be positive")


def _default_mask_thresholds() -> tuple[float, ...]:
    return tuple(round(0.50 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class ApConfig:
    chamfer_thresholds_m: tuple[float, ...] = (0.9, 1.5, 3.0, 4.5)
    mask_iou_thresholds: tuple[float, ...] = _default_mask_thresholds()
    recall_points: int = 101

    def __post_init__(self):
        for name, ts in (
            ("chamfer_thresholds_m", self.chamfer_thresholds_m),
            ("mask_iou_thresholds", self.mask_iou_thresholds),
        ):
            if any(t <= 0 for t in ts):
                raise ValueError(f"{name} must be positive")
            if list(ts) != sorted(ts):
                raise ValueError(f"{name} must be ascending")


# --- rasterization ----------------------------------------------------------


def _segment_boxes(line: LineRecord, radius: float, width: int, height: int):
    """Per segment: the pixel window touched by the stroke and the squared
    distance of each window pixel center to the segment."""
    for a, b in zip(line.points, line.points[1:]):
        minx, maxx = min(a.x, b.x), max(a.x, b.x)
        miny, maxy = min(a.y, b.y), max(a.y, b.y)
        col0 = max(0, math.ceil(minx - radius - 0.5))
        col1 = min(width - 1, math.floor(maxx + radius - 0.5))
        row0 = max(0, math.ceil(miny - radius - 0.5))
        row1 = min(height - 1, math.floor(maxy + radius - 0.5))
        if col0 > col1 or row0 > row1:
            continue
        xs = np.arange(col0, col1 + 1, dtype=np.float64) + 0.5
        ys = np.arange(row0, row1 + 1, dtype=np.float64) + 0.5
        px, py = np.meshgrid(xs, ys)
        vx, vy = b.x - a.x, b.y - a.y
        seg_len2 = vx * vx + vy * vy
        if seg_len2 == 0.0:
            d2 = (px - a.x) ** 2 + (py - a.y) ** 2
        else:
            t = np.clip(((px - a.x) * vx + (py - a.y) * vy) / seg_len2, 0.0, 1.0)
            d2 = (px - (a.x + t * vx)) ** 2 + (py - (a.y + t * vy)) ** 2
        yield row0, col0, d2


def rasterize(lines: Sequence[LineRecord], spec: RasterSpec) -> np.ndarray:
    """Draw the polylines as stroked paths into one binary mask."""
    mask = np.zeros((spec.height_px, spec.width_px), dtype=bool)
    radius = spec.line_width_px / 2.0
    r2 = radius * radius
    for line in lines:
        for row0, col0, d2 in _segment_boxes(line, radius, spec.width_px, spec.height_px):
            h, w = d2.shape
            mask[row0 : row0 + h, col0 : col0 + w] |= d2 <= r2
    return mask


def _instance_pixels(line: LineRecord, spec: RasterSpec) -> np.ndarray:
    """Sorted unique flat pixel indices of one line's stroke."""
    radius = spec.line_width_px / 2.0
    r2 = radius * radius
    chunks = []
    for row0, col0, d2 in _segment_boxes(line, radius, spec.width_px, spec.height_px):
        rows, cols = np.nonzero(d2 <= r2)
        if rows.size:
            chunks.append((rows + row0).astype(np.int64) * spec.width_px + (cols + col0))
    if not chunks:
        return np.empty(0, dtype=np.int64)
    return np.unique(np.concatenate(chunks))


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two binary masks; 1.0 when both are empty."""
    if a.shape != b.shape:
        raise ValueError(f"mask dimension mismatch: {a.shape} vs {b.shape}")
    a = a.astype(bool)
    b = b.astype(bool)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def miou(pred: VectorMap, gt: VectorMap, spec: RasterSpec) -> tuple[dict[str, float], float]:
    """Per-category mask IoU and its mean over the three line categories.

    A category that is empty on both sides counts as IoU 1.0 (correct
    absence is not penalized)."""
    per_category: dict[str, float] = {}
    for cat in LineCategory:
        p_lines = [ln for ln in pred.lines if ln.category is cat]
        g_lines = [ln for ln in gt.lines if ln.category is cat]
        if not p_lines and not g_lines:
            per_category[cat.value] = 1.0
            continue
        p_mask = rasterize(p_lines, spec)
        g_mask = rasterize(g_lines, spec)
        per_category[cat.value] = mask_iou(p_mask, g_mask)
    mean = sum(per_category.values()) / len(per_category)
    return per_category, mean


# --- chamfer distance -------------------------------------------------------


def _dense_samples(line: LineRecord) -> np.ndarray:
    dense = resample_equidistant(line, SamplingConfig(interval_m=1.0), mpp=1.0)
    return np.asarray([(p.x, p.y) for p in dense.points], dtype=np.float64)


def chamfer_distance(a: LineRecord, b: LineRecord, mpp: float = 0.15) -> float:
    """Symmetric mean nearest-sample distance between two polylines, in
    meters, over 1-px dense resamplings."""
    if len(a.points) < 2 or len(b.points) < 2:
        raise GeometryError("chamfer_distance needs polylines with >= 2 points")
    sa = _dense_samples(a)
    sb = _dense_samples(b)
    da = cKDTree(sb).query(sa)[0]
    db = cKDTree(sa).query(sb)[0]
    return 0.5 * (float(da.mean()) + float(db.mean())) * mpp


def pseudo_score(logits: Sequence[float]) -> float:
    """Maximum softmax probability of a line's class logits, computed with
    the max-subtraction trick for numerical stability."""
    vals = [float(v) for v in logits]
    if not vals:
        raise ValueError("pseudo_score needs at least one logit")
    if any(not math.isfinite(v) for v in vals):
        raise ValueError("pseudo_score needs finite logits")
    top = max(vals)
    return 1.0 / sum(math.exp(v - top) for v in vals)


# --- average precision ------------------------------------------------------

MatchQuality = Callable[[object, object], "float | None"]


def _pr_points(
    pred_scores: Sequence[float],
    n_gt: int,
    tp_flags: Sequence[bool],
) -> tuple[np.ndarray, np.ndarray]:
    tp = np.cumsum(np.asarray(tp_flags, dtype=np.float64))
    fp = np.cumsum(~np.asarray(tp_flags, dtype=bool))
    recall = tp / n_gt
    precision = tp / np.maximum(tp + fp, 1e-12)
    return recall, precision


def _interpolated_ap(recall: np.ndarray, precision: np.ndarray, recall_points: int) -> float:
    env = precision.copy()
    for i in range(len(env) - 2, -1, -1):
        env[i] = max(env[i], env[i + 1])
    thresholds = np.linspace(0.0, 1.0, recall_points)
    idx = np.searchsorted(recall, thresholds, side="left")
    vals = np.where(idx < len(env), env[np.minimum(idx, len(env) - 1)], 0.0)
    return float(vals.mean())


def average_precision(
    preds: Sequence[tuple[float, object]],
    gts: Sequence[object],
    is_match: MatchQuality,
    cfg: ApConfig = ApConfig(),
    *,
    return_curve: bool = False,
):
    """Greedy score-descending matching + 101-point interpolated AP.

    ``preds`` are (score, payload) pairs; ``is_match(pred, gt)`` returns a
    match quality (higher is better: negated distance, or IoU) or None when
    the pair cannot match. Each prediction takes the best unmatched GT;
    quality ties go to the lowest GT index.
    """
    n_gt = len(gts)
    if n_gt == 0:
        ap = 1.0 if not preds else 0.0
        empty = np.zeros(0)
        return (ap, empty, empty) if return_curve else ap
    order = sorted(range(len(preds)), key=lambda i: -preds[i][0])
    gt_taken = [False] * n_gt
    tp_flags: list[bool] = []
    for pi in order:
        _, payload = preds[pi]
        best_q = None
        best_gi = None
        for gi, gt in enumerate(gts):
            if gt_taken[gi]:
                continue
            q = is_match(payload, gt)
            if q is None:
                continue
            if best_q is None or q > best_q:
                best_q, best_gi = q, gi
        if best_gi is None:
            tp_flags.append(False)
        else:
            gt_taken[best_gi] = True
            tp_flags.append(True)
    if not tp_flags:
        ap = 0.0
        empty = np.zeros(0)
        return (ap, empty, empty) if return_curve else ap
    scores = [preds[i][0] for i in order]
    recall, precision = _pr_points(scores, n_gt, tp_flags)
    ap = _interpolated_ap(recall, precision, cfg.recall_points)
    return (ap, recall, precision) if return_curve else ap


# --- full evaluation --------------------------------------------------------


def _bbox(line: LineRecord) -> tuple[float, float, float, float]:
    xs = [p.x for p in line.points]
    ys = [p.y for p in line.points]
    return min(xs), min(ys), max(xs), max(ys)


def _bbox_gap(a, b) -> float:
    dx = max(0.0, max(a[0] - b[2], b[0] - a[2]))
    dy = max(0.0, max(a[1] - b[3], b[1] - a[3]))
    return math.hypot(dx, dy)


def _mean_bbox_dist(samples: np.ndarray, box) -> float:
    dx = np.maximum(0.0, np.maximum(box[0] - samples[:, 0], samples[:, 0] - box[2]))
    dy = np.maximum(0.0, np.maximum(box[1] - samples[:, 1], samples[:, 1] - box[3]))
    return float(np.hypot(dx, dy).mean())


class _ChamferTable:
    """Lazy pairwise chamfer distances with cheap lower-bound pruning."""

    def __init__(self, preds: Sequence[LineRecord], gts: Sequence[LineRecord], max_px: float, mpp: float):
        self.preds = preds
        self.gts = gts
        self.max_px = max_px
        self.mpp = mpp
        self.p_boxes = [_bbox(ln) for ln in preds]
        self.g_boxes = [_bbox(ln) for ln in gts]
        self._p_samples: dict[int, np.ndarray] = {}
        self._g_samples: dict[int, np.ndarray] = {}
        self._cache: dict[tuple[int, int], float | None] = {}

    def _samples(self, store, lines, i) -> np.ndarray:
        if i not in store:
            store[i] = _dense_samples(lines[i])
        return store[i]

    def meters(self, pi: int, gi: int) -> float | None:
        """Chamfer in meters, or None when provably above the top threshold."""
        key = (pi, gi)
        if key in self._cache:
            return self._cache[key]
        result: float | None
        if _bbox_gap(self.p_boxes[pi], self.g_boxes[gi]) > self.max_px:
            result = None
        else:
            sp = self._samples(self._p_samples, self.preds, pi)
            sg = self._samples(self._g_samples, self.gts, gi)
            # every nearest-sample distance is >= the distance to the other
            # line's bbox, so this mean is a lower bound on the chamfer
            bound = 0.5 * (
                _mean_bbox_dist(sp, self.g_boxes[gi]) + _mean_bbox_dist(sg, self.p_boxes[pi])
            )
            if bound > self.max_px:
                result = None
            else:
                dp = cKDTree(sg).query(sp)[0]
                dg = cKDTree(sp).query(sg)[0]
                px = 0.5 * (float(dp.mean()) + float(dg.mean()))
                result = px * self.mpp if px <= self.max_px else None
        self._cache[key] = result
        return result


def _scored(lines: Sequence[LineRecord]) -> list[tuple[float, int]]:
    return [(ln.score if ln.score is not None else 1.0, i) for i, ln in enumerate(lines)]


def evaluate(
    pred: VectorMap,
    gt: VectorMap,
    cfg: ApConfig = ApConfig(),
    spec: RasterSpec | None = None,
    *,
    collect_curves: bool = False,
):
    """Compute the full metric report for a predicted map against ground truth.

    Returns the report dict; with ``collect_curves`` also a details dict of
    PR curves keyed by metric name, for plotting.
    """
    if (pred.width_px, pred.height_px) != (gt.width_px, gt.height_px):
        raise ValueError(
            f"frame mismatch: pred {pred.width_px}x{pred.height_px} "
            f"vs gt {gt.width_px}x{gt.height_px}"
        )
    if spec is None:
        spec = RasterSpec(int(round(gt.width_px)), int(round(gt.height_px)))
    mpp = gt.meters_per_pixel

    preds = list(pred.lines)
    gts = list(gt.lines)
    pred_scored = _scored(preds)
    curves: dict[str, tuple[np.ndarray, np.ndarray, float]] = {}

    max_d = max(cfg.chamfer_thresholds_m)
    table = _ChamferTable(preds, gts, max_px=max_d / mpp, mpp=mpp)

    ap_c: dict[str, float] = {}
    for dist_m in cfg.chamfer_thresholds_m:
        def chamfer_match(pi, gi, _d=dist_m):
            if preds[pi].category is not gts[gi].category:
                return None
            cd = table.meters(pi, gi)
            if cd is None or cd > _d:
                return None
            return -cd

        ap, rec, prec = average_precision(
            pred_scored, list(range(len(gts))), chamfer_match, cfg, return_curve=True
        )
        ap_c[str(dist_m)] = ap
        curves[f"chamfer@{dist_m}"] = (rec, prec, ap)

    pred_px = [_instance_pixels(ln, spec) for ln in preds]
    gt_px = [_instance_pixels(ln, spec) for ln in gts]
    iou_cache: dict[tuple[int, int], float] = {}
    p_boxes = table.p_boxes
    g_boxes = table.g_boxes
    stroke = spec.line_width_px

    def instance_iou(pi, gi) -> float:
        key = (pi, gi)
        if key in iou_cache:
            return iou_cache[key]
        a, b = pred_px[pi], gt_px[gi]
        if a.size == 0 and b.size == 0:
            iou = 1.0
        elif a.size == 0 or b.size == 0:
            iou = 0.0
        else:
            pb, gb = p_boxes[pi], g_boxes[gi]
            ow = min(pb[2], gb[2]) - max(pb[0], gb[0]) + stroke
            oh = min(pb[3], gb[3]) - max(pb[1], gb[1]) + stroke
            upper = max(0.0, ow) * max(0.0, oh)  # stroke bbox overlap area
            if upper / max(a.size, b.size) < 0.2:
                iou = upper / max(a.size, b.size)  # pessimistic but < threshold
            else:
                inter = np.intersect1d(a, b, assume_unique=True).size
                iou = inter / (a.size + b.size - inter)
        iou_cache[key] = iou
        return iou

    ap_m_per_t: dict[float, float] = {}
    for t in cfg.mask_iou_thresholds:
        def mask_match(pi, gi, _t=t):
            if preds[pi].category is not gts[gi].category:
                return None
            iou = instance_iou(pi, gi)
            return iou if iou >= _t else None

        ap, rec, prec = average_precision(
            pred_scored, list(range(len(gts))), mask_match, cfg, return_curve=True
        )
        ap_m_per_t[t] = ap
        curves[f"mask@{t}"] = (rec, prec, ap)

    per_category, miou_mean = miou(pred, gt, spec)

    report = {
        "ap_c": ap_c,
        "ap_m": sum(ap_m_per_t.values()) / len(ap_m_per_t),
        "ap_m_50": ap_m_per_t[0.50],
        "ap_m_75": ap_m_per_t[0.75],
        "miou": miou_mean,
        "per_category_iou": per_category,
    }
    if collect_curves:
        return report, curves
    return report


def evaluate_per_category(
    pred: VectorMap, gt: VectorMap, cfg: ApConfig = ApConfig(), spec: RasterSpec | None = None
) -> dict[str, dict[str, float]]:
    """Chamfer AP broken out per line category (detail view)."""
    out: dict[str, dict[str, float]] = {}
    for cat in LineCategory:
        p = replace(pred, lines=tuple(ln for ln in pred.lines if ln.category is cat))
        g = replace(gt, lines=tuple(ln for ln in gt.lines if ln.category is cat))
        mpp = gt.meters_per_pixel
        table = _ChamferTable(list(p.lines), list(g.lines), max(cfg.chamfer_thresholds_m) / mpp, mpp)
        scored = _scored(list(p.lines))
        cat_aps = {}
        for dist_m in cfg.chamfer_thresholds_m:
            def match(pi, gi, _d=dist_m):
                cd = table.meters(pi, gi)
                return None if cd is None or cd > _d else -cd

            cat_aps[str(dist_m)] = average_precision(scored, list(range(len(g.lines))), match, cfg)
        out[cat.value] = cat_aps
    return out
