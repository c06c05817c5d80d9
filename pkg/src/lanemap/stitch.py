"""Iterative state-update construction of a large map around a pluggable
generator: plan axis-aligned patches, hand each request the border
cut-point context from the map built so far, detokenize the generator's
answer and splice it into the growing global map.

The loop is strictly sequential within one image (each state depends on
the previous one); separate images can run in parallel with their own
engine instances.
"""
from __future__ import annotations

import json
import math
import select
import shlex
import subprocess
import time
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .augment import clip_line_to_rect, crop_patch
from .codec import Vocabulary, detokenize, serialize_map
from .geolink import PromptMode, build_prompt
from .metrics import pseudo_score
from .model import (
    EndpointKind,
    LineRecord,
    PatchFrame,
    Point2,
    VectorMap,
    patch_to_world,
    world_to_patch,
)
from .sampling import SamplingConfig, reorder_lines, resample_equidistant


class GeneratorError(RuntimeError):
    """Base class for generator adapter failures."""


class GeneratorTimeoutError(GeneratorError):
    pass


class GeneratorExitError(GeneratorError):
    """The external generator exited nonzero or closed its output."""


class MalformedResponseError(GeneratorError):
    """The external generator broke the wire protocol or its invariants."""


@dataclass(frozen=True)
class PvRef:
    path: str
    position: Point2
    heading_deg: float


@dataclass(frozen=True)
class GenRequest:
    """One generation request. ``context_tokens`` is the rendered token
    string of the border-context sub-map and must parse in strict mode."""

    patch_id: int
    frame: PatchFrame
    bev_image_ref: str | None = None
    pv_refs: tuple[PvRef, ...] | None = None
    prompt_text: str = ""
    context_tokens: str = ""

    def __post_init__(self):
        if not self.prompt_text:
            raise ValueError("prompt_text must be non-empty")


@dataclass(frozen=True)
class GenResponse:
    """A generator's answer: the patch-local token string plus optional
    per-line class logits (one row per serialized line)."""

    token_string: str
    class_logits: tuple[tuple[float, ...], ...] | None = None


@dataclass(frozen=True)
class StitchConfig:
    """Engine parameters. Patch order is fixed: row-major, left-to-right,
    top-to-bottom, with the last row/column clamped into bounds."""

    patch_size_px: int = 896
    context_band_px: float = 40.0
    join_tolerance_px: float = 4.0
    meters_per_pixel: float = 0.15
    fail_fast: bool = False

    def __post_init__(self):
        if self.patch_size_px <= 0:
            raise ValueError("patch_size_px must be > 0")
        if self.context_band_px < 0 or self.join_tolerance_px < 0:
            raise ValueError("band and tolerance must be >= 0")


@dataclass(frozen=True)
class PatchDiagnostic:
    patch_id: int
    stage: str
    message: str


@dataclass(frozen=True)
class StitchResult:
    map: VectorMap
    diagnostics: tuple[PatchDiagnostic, ...]


def _axis_offsets(extent: float, size: float) -> list[float]:
    offsets = []
    off = 0.0
    while off + size <= extent:
        offsets.append(off)
        off += size
    if offsets[-1] + size < extent:
        offsets.append(extent - size)
    return offsets


def plan_patches(width_px: float, height_px: float, cfg: StitchConfig = StitchConfig()) -> list[PatchFrame]:
    """Axis-aligned tiling at stride = patch size, final offset clamped so
    the image is fully covered. Row-major order."""
    size = float(cfg.patch_size_px)
    if width_px < size or height_px < size:
        raise ValueError(
            f"image {width_px}x{height_px} smaller than patch size {cfg.patch_size_px}"
        )
    frames = []
    for oy in _axis_offsets(float(height_px), size):
        for ox in _axis_offsets(float(width_px), size):
            frames.append(
                PatchFrame(
                    center=Point2(ox + size / 2.0, oy + size / 2.0),
                    angle_deg=0.0,
                    width_px=size,
                    height_px=size,
                    parent_width_px=float(width_px),
                    parent_height_px=float(height_px),
                )
            )
    return frames


def _dist_to_border(p: Point2, width: float, height: float) -> float:
    """Distance from a point to the boundary of [0,width]x[0,height]."""
    inside_x = 0.0 <= p.x <= width
    inside_y = 0.0 <= p.y <= height
    if inside_x and inside_y:
        return min(p.x, width - p.x, p.y, height - p.y)
    dx = max(0.0 - p.x, p.x - width, 0.0)
    dy = max(0.0 - p.y, p.y - height, 0.0)
    return math.hypot(dx, dy)


def collect_border_context(
    global_map: VectorMap, frame: PatchFrame, cfg: StitchConfig = StitchConfig()
) -> VectorMap:
    """Terminal stubs (up to 3 points) of every global line whose Cut
    endpoint lies within the context band of the patch border, in
    patch-local coordinates, clamped into the patch so the result is
    serialize-ready."""
    w, h = frame.width_px, frame.height_px
    stubs: list[LineRecord] = []
    for line in global_map.lines:
        for end_name in ("start", "end"):
            kind = line.start_kind if end_name == "start" else line.end_kind
            if kind is not EndpointKind.Cut:
                continue
            endpoint = line.points[0] if end_name == "start" else line.points[-1]
            local_end = world_to_patch(endpoint, frame)
            if _dist_to_border(local_end, w, h) > cfg.context_band_px:
                continue
            if end_name == "end":
                tail = line.points[-3:]
                covers_other_end = len(line.points) <= 3
                far_kind = line.start_kind if covers_other_end else EndpointKind.Cut
            else:
                tail = tuple(reversed(line.points[:3]))
                covers_other_end = len(line.points) <= 3
                far_kind = line.end_kind if covers_other_end else EndpointKind.Cut
            pts = []
            for p in tail:
                lp = world_to_patch(p, frame)
                clamped = Point2(min(max(lp.x, 0.0), w), min(max(lp.y, 0.0), h))
                if not pts or clamped != pts[-1]:
                    pts.append(clamped)
            if len(pts) < 2:
                # clamping collapsed the stub (line crosses the border
                # perpendicularly); keep a 1-px tick along the line's
                # continuation so the cut point still reaches the generator
                neighbor = world_to_patch(tail[-2], frame)
                norm = math.hypot(local_end.x - neighbor.x, local_end.y - neighbor.y)
                tick = Point2(
                    min(max(local_end.x + (local_end.x - neighbor.x) / norm, 0.0), w),
                    min(max(local_end.y + (local_end.y - neighbor.y) / norm, 0.0), h),
                )
                end_clamped = Point2(min(max(local_end.x, 0.0), w), min(max(local_end.y, 0.0), h))
                if tick == end_clamped:
                    continue
                pts = [tick, end_clamped]
                far_kind = EndpointKind.Cut
            stubs.append(
                LineRecord(
                    id=f"{line.id}@{end_name}",
                    points=tuple(pts),
                    category=line.category,
                    line_type=line.line_type,
                    start_kind=far_kind,
                    end_kind=EndpointKind.Cut,
                )
            )
    return VectorMap(
        lines=tuple(stubs),
        width_px=w,
        height_px=h,
        meters_per_pixel=global_map.meters_per_pixel,
        frame_id="patch-context",
    )


class _Rec:
    """Mutable working record during one merge pass."""

    __slots__ = ("points", "start_kind", "end_kind", "line", "order")

    def __init__(self, line: LineRecord, order: int):
        self.points = list(line.points)
        self.start_kind = line.start_kind
        self.end_kind = line.end_kind
        self.line = line
        self.order = order

    def oriented(self, entry_end: str):
        if entry_end == "start":
            return list(self.points), self.start_kind, self.end_kind
        return list(reversed(self.points)), self.end_kind, self.start_kind


def _endpoint(rec: _Rec, end: str) -> Point2:
    return rec.points[0] if end == "start" else rec.points[-1]


def merge_patch(
    global_map: VectorMap,
    patch_map: VectorMap,
    frame: PatchFrame,
    cfg: StitchConfig = StitchConfig(),
) -> VectorMap:
    """Transform patch lines into the parent frame and splice them onto the
    global map at matching Cut endpoints.

    Matching is greedy in ascending endpoint distance, requires equal
    categories and a distance within the join tolerance, and consumes each
    endpoint at most once. The junction point is the midpoint of the two
    matched endpoints; unmatched patch lines are appended as new records.
    """
    g_recs = [_Rec(ln, i) for i, ln in enumerate(global_map.lines)]
    p_recs = [
        _Rec(replace(ln, points=tuple(patch_to_world(p, frame) for p in ln.points)), i)
        for i, ln in enumerate(patch_map.lines)
    ]

    candidates = []
    for gi, g in enumerate(g_recs):
        for g_end in ("start", "end"):
            if (g.start_kind if g_end == "start" else g.end_kind) is not EndpointKind.Cut:
                continue
            gp = _endpoint(g, g_end)
            for pi, p in enumerate(p_recs):
                if p.line.category is not g.line.category:
                    continue
                for p_end in ("start", "end"):
                    if (p.start_kind if p_end == "start" else p.end_kind) is not EndpointKind.Cut:
                        continue
                    pp = _endpoint(p, p_end)
                    d = math.hypot(gp.x - pp.x, gp.y - pp.y)
                    if d <= cfg.join_tolerance_px:
                        candidates.append((d, gi, g_end, pi, p_end))
    candidates.sort(key=lambda c: (c[0], c[1], c[2], c[3], c[4]))

    taken: set[tuple[str, int, str]] = set()
    edges: dict[tuple[str, int, str], tuple[str, int, str]] = {}
    for d, gi, g_end, pi, p_end in candidates:
        gk = ("g", gi, g_end)
        pk = ("p", pi, p_end)
        if gk in taken or pk in taken:
            continue
        taken.add(gk)
        taken.add(pk)
        edges[gk] = pk
        edges[pk] = gk

    recs = {"g": g_recs, "p": p_recs}
    visited: set[tuple[str, int]] = set()
    merged: list[tuple[int, LineRecord]] = []
    new_lines: list[LineRecord] = []
    frame_tag = f"p{int(frame.center.x)}x{int(frame.center.y)}"

    for side in ("g", "p"):
        for idx in range(len(recs[side])):
            node = (side, idx)
            if node in visited:
                continue
            if not any((side, idx, e) in edges for e in ("start", "end")):
                visited.add(node)
                rec = recs[side][idx]
                if side == "g":
                    merged.append((rec.order, rec.line))
                else:
                    new_lines.append(
                        replace(rec.line, id=f"{frame_tag}.{idx}", points=tuple(rec.points))
                    )
                continue
            component = _component_nodes(edges, node)
            start = None
            for n in sorted(component):
                for e in ("start", "end"):
                    if (n[0], n[1], e) not in edges:
                        start = (n, e)
                        break
                if start is not None:
                    break
            if start is None:  # every end matched: a closed ring
                start = (min(component), "start")
            chain = _walk_chain(recs, edges, start[0], start[1])
            for n in chain["nodes"]:
                visited.add(n)
            rec = _assemble_chain(recs, chain)
            g_orders = [recs["g"][i].order for s, i in chain["nodes"] if s == "g"]
            if g_orders:
                anchor = min(g_orders)
                base = recs["g"][anchor].line
                merged.append(
                    (
                        anchor,
                        replace(
                            base,
                            points=rec["points"],
                            start_kind=rec["start_kind"],
                            end_kind=rec["end_kind"],
                            score=rec["score"],
                        ),
                    )
                )
            else:
                first_p = min(i for s, i in chain["nodes"] if s == "p")
                base = recs["p"][first_p].line
                new_lines.append(
                    replace(
                        base,
                        id=f"{frame_tag}.{first_p}",
                        points=rec["points"],
                        start_kind=rec["start_kind"],
                        end_kind=rec["end_kind"],
                        score=rec["score"],
                    )
                )

    merged.sort(key=lambda t: t[0])
    out_lines = tuple(line for _, line in merged) + tuple(new_lines)
    return replace(global_map, lines=out_lines)


def _component_nodes(edges, node) -> set[tuple[str, int]]:
    seen = {node}
    frontier = [node]
    while frontier:
        side, idx = frontier.pop()
        for e in ("start", "end"):
            key = (side, idx, e)
            if key in edges:
                nside, nidx, _ = edges[key]
                if (nside, nidx) not in seen:
                    seen.add((nside, nidx))
                    frontier.append((nside, nidx))
    return seen


def _walk_chain(recs, edges, start_node, entry_end):
    """Follow splice edges record-to-record starting at a free end (paths)
    or anywhere (rings)."""
    nodes = []
    junctions = []
    side, idx = start_node
    end = entry_end
    is_cycle = (side, idx, entry_end) in edges
    first_key = (side, idx, entry_end)
    while True:
        nodes.append((side, idx))
        exit_end = "end" if end == "start" else "start"
        key = (side, idx, exit_end)
        if key not in edges:
            break
        nside, nidx, nend = edges[key]
        junctions.append(((side, idx, exit_end), (nside, nidx, nend)))
        if (nside, nidx, nend) == first_key:
            break  # ring closed
        side, idx, end = nside, nidx, nend
    return {"nodes": nodes, "junctions": junctions, "entry": entry_end, "cycle": is_cycle}


def _assemble_chain(recs, chain):
    """Concatenate oriented records, replacing each matched endpoint pair
    with its midpoint (the junction loses its endpoint kinds)."""
    nodes = chain["nodes"]
    entry = chain["entry"]
    points: list[Point2] = []
    start_kind = end_kind = EndpointKind.Natural
    scores = []
    end = entry
    for k, (side, idx) in enumerate(nodes):
        rec = recs[side][idx]
        if rec.line.score is not None:
            scores.append(rec.line.score)
        pts, first_kind, last_kind = rec.oriented(end)
        if k == 0:
            points.extend(pts)
            start_kind = first_kind
        else:
            junction = Point2(
                (points[-1].x + pts[0].x) / 2.0, (points[-1].y + pts[0].y) / 2.0
            )
            points[-1] = junction
            points.extend(pts[1:])
        end_kind = last_kind
        if k < len(chain["junctions"]):
            # next record enters through the matched end recorded in the edge
            (_, _, _), (nside, nidx, nend) = chain["junctions"][k]
            end = nend
    if chain["cycle"]:
        junction = Point2((points[-1].x + points[0].x) / 2.0, (points[-1].y + points[0].y) / 2.0)
        points[-1] = junction
        points[0] = junction
        start_kind = end_kind = EndpointKind.Natural
    deduped = [points[0]]
    for p in points[1:]:
        if p != deduped[-1]:
            deduped.append(p)
    return {
        "points": tuple(deduped),
        "start_kind": start_kind,
        "end_kind": end_kind,
        "score": min(scores) if scores else None,
    }


def unmatched_cut_endpoints(m: VectorMap, border_margin_px: float = 1.0) -> list[tuple[str, str, Point2]]:
    """Audit: Cut endpoints that do not sit on the map border (splice
    leftovers). A clean oracle-stitched map has none in the interior."""
    leftovers = []
    for line in m.lines:
        for end_name, kind, p in (
            ("start", line.start_kind, line.points[0]),
            ("end", line.end_kind, line.points[-1]),
        ):
            if kind is EndpointKind.Cut and _dist_to_border(p, m.width_px, m.height_px) > border_margin_px:
                leftovers.append((line.id, end_name, p))
    return leftovers


_SEAM_EPS = 1e-9


def _novel_rects(width: float, height: float, cfg: StitchConfig) -> list[tuple[float, float, float, float]]:
    """Per planned patch, the sub-rectangle not covered by earlier patches
    (row-major clamped tiling makes this a rectangle).

    The region is half-open along coverage seams: geometry lying exactly on
    a seam belongs to the earlier patch (both closed crops contain it, and
    keeping both would duplicate it), so seam edges are nudged inward by an
    epsilon far below coordinate rounding."""
    size = float(cfg.patch_size_px)
    xs = _axis_offsets(float(width), size)
    ys = _axis_offsets(float(height), size)
    rects = []
    for j, oy in enumerate(ys):
        y0 = max(oy, ys[j - 1] + size) + _SEAM_EPS if j > 0 else oy
        for i, ox in enumerate(xs):
            x0 = max(ox, xs[i - 1] + size) + _SEAM_EPS if i > 0 else ox
            rects.append((x0, y0, ox + size, oy + size))
    return rects


Generator = Callable[[GenRequest], GenResponse]


def run_state_update(
    width_px: float,
    height_px: float,
    generator: Generator,
    cfg: StitchConfig = StitchConfig(),
    prompts: Sequence[str] | str | None = None,
    *,
    bev_image_ref: str | None = None,
    pv_refs: tuple[PvRef, ...] | None = None,
    vocab: Vocabulary | None = None,
) -> StitchResult:
    """Run the full state-update loop from an empty map.

    Per patch: collect border context from the map so far, call the
    generator, detokenize leniently, attach pseudo-scores when logits are
    present, trim the patch map to its novel area (overlap with already
    generated patches is discarded, trim cuts labeled Cut) and merge.
    Generator failures are recorded and the patch skipped unless
    ``cfg.fail_fast``.
    """
    if vocab is None:
        vocab = Vocabulary(max_coord=cfg.patch_size_px)
    frames = plan_patches(width_px, height_px, cfg)
    rects = _novel_rects(width_px, height_px, cfg)
    size = float(cfg.patch_size_px)
    global_map = VectorMap(
        lines=(),
        width_px=float(width_px),
        height_px=float(height_px),
        meters_per_pixel=cfg.meters_per_pixel,
        frame_id="world",
    )
    diagnostics: list[PatchDiagnostic] = []
    default_prompt = build_prompt(PromptMode.BEV_ONLY)

    for patch_id, (frame, rect) in enumerate(zip(frames, rects)):
        context = reorder_lines(collect_border_context(global_map, frame, cfg))
        if isinstance(prompts, str):
            prompt = prompts
        elif prompts is not None:
            prompt = prompts[patch_id]
        else:
            prompt = default_prompt
        request = GenRequest(
            patch_id=patch_id,
            frame=frame,
            bev_image_ref=bev_image_ref,
            pv_refs=pv_refs,
            prompt_text=prompt,
            context_tokens=serialize_map(context, vocab).rendered,
        )
        try:
            response = generator(request)
        except Exception as exc:
            if cfg.fail_fast:
                raise
            diagnostics.append(PatchDiagnostic(patch_id, "generate", str(exc)))
            continue
        patch_map, diags = detokenize(
            response.token_string,
            vocab,
            mode="lenient",
            width_px=size,
            height_px=size,
            meters_per_pixel=cfg.meters_per_pixel,
        )
        for d in diags:
            diagnostics.append(PatchDiagnostic(patch_id, "detokenize", d.message))
        if response.class_logits is not None:
            if len(response.class_logits) == len(patch_map.lines):
                patch_map = replace(
                    patch_map,
                    lines=tuple(
                        replace(ln, score=pseudo_score(lg))
                        for ln, lg in zip(patch_map.lines, response.class_logits)
                    ),
                )
            else:
                diagnostics.append(
                    PatchDiagnostic(
                        patch_id,
                        "scores",
                        f"class_logits length {len(response.class_logits)} != "
                        f"{len(patch_map.lines)} parsed lines; ignored",
                    )
                )
        # trim to the novel sub-rectangle, in patch-local coordinates
        ox = frame.center.x - size / 2.0
        oy = frame.center.y - size / 2.0
        lx0, ly0 = rect[0] - ox, rect[1] - oy
        trimmed = []
        for line in patch_map.lines:
            trimmed.extend(clip_line_to_rect(line, lx0, ly0, size, size))
        patch_map = replace(patch_map, lines=tuple(trimmed))
        global_map = merge_patch(global_map, patch_map, frame, cfg)
    return StitchResult(map=global_map, diagnostics=tuple(diagnostics))


# --- reference generators ---------------------------------------------------


class OracleGenerator:
    """Test double that answers every request with the ground truth cropped
    to the requested frame, resampled, reordered and serialized.
    Single-class logits make every pseudo-score exactly 1."""

    def __init__(
        self,
        gt: VectorMap,
        sampling: SamplingConfig = SamplingConfig(),
        vocab: Vocabulary | None = None,
    ):
        self.gt = gt
        self.sampling = sampling
        self.vocab = vocab

    def _vocab(self, frame: PatchFrame) -> Vocabulary:
        if self.vocab is None:
            self.vocab = Vocabulary(max_coord=int(frame.width_px))
        return self.vocab

    def _patch_lines(self, request: GenRequest) -> VectorMap:
        sample = crop_patch(self.gt, request.frame)
        resampled = tuple(
            resample_equidistant(ln, self.sampling, self.gt.meters_per_pixel)
            for ln in sample.lines.lines
        )
        return reorder_lines(replace(sample.lines, lines=resampled))

    def __call__(self, request: GenRequest) -> GenResponse:
        patch = self._patch_lines(request)
        seq = serialize_map(patch, self._vocab(request.frame))
        return GenResponse(
            token_string=seq.rendered,
            class_logits=tuple((1.0,) for _ in patch.lines),
        )


def oracle_generate(request: GenRequest, gt: VectorMap) -> GenResponse:
    """One-shot oracle call (convenience wrapper around OracleGenerator)."""
    return OracleGenerator(gt)(request)


class NoisyOracleGenerator(OracleGenerator):
    """Oracle plus seeded per-point Gaussian jitter and line dropping.

    Unit noise and drop decisions are drawn from a stream keyed by
    (seed, patch_id) only, then scaled by sigma, so the displacement of
    every point grows monotonically with sigma for a fixed seed.
    """

    def __init__(
        self,
        gt: VectorMap,
        sigma_px: float = 0.0,
        drop_prob: float = 0.0,
        seed: int = 0,
        sampling: SamplingConfig = SamplingConfig(),
        vocab: Vocabulary | None = None,
    ):
        super().__init__(gt, sampling, vocab)
        if sigma_px < 0 or not 0.0 <= drop_prob <= 1.0:
            raise ValueError("sigma_px must be >= 0 and drop_prob in [0, 1]")
        self.sigma_px = sigma_px
        self.drop_prob = drop_prob
        self.seed = seed

    def __call__(self, request: GenRequest) -> GenResponse:
        patch = self._patch_lines(request)
        rng = np.random.default_rng((self.seed, request.patch_id))
        size = request.frame.width_px
        kept: list[LineRecord] = []
        for line in patch.lines:
            drop = rng.random() < self.drop_prob
            unit = rng.standard_normal((len(line.points), 2))
            if drop:
                continue
            pts = []
            for p, (nx, ny) in zip(line.points, unit):
                x = min(max(p.x + self.sigma_px * nx, 0.0), size)
                y = min(max(p.y + self.sigma_px * ny, 0.0), request.frame.height_px)
                q = Point2(x, y)
                if not pts or q != pts[-1]:
                    pts.append(q)
            if len(pts) < 2:
                continue
            kept.append(replace(line, points=tuple(pts)))
        noisy = replace(patch, lines=tuple(kept))
        seq = serialize_map(noisy, self._vocab(request.frame))
        return GenResponse(
            token_string=seq.rendered,
            class_logits=tuple((1.0,) for _ in noisy.lines),
        )


# --- external generator adapter ---------------------------------------------


def _request_payload(request: GenRequest) -> dict:
    return {
        "patch_id": request.patch_id,
        "frame": {
            "cx": request.frame.center.x,
            "cy": request.frame.center.y,
            "angle": request.frame.angle_deg,
            "size": int(request.frame.width_px),
        },
        "bev_image": request.bev_image_ref,
        "pv": (
            [
                {"path": r.path, "x": r.position.x, "y": r.position.y, "heading": r.heading_deg}
                for r in request.pv_refs
            ]
            if request.pv_refs is not None
            else None
        ),
        "prompt": request.prompt_text,
        "context_tokens": request.context_tokens,
    }


def _parse_response(line: str, vocab: Vocabulary | None) -> GenResponse:
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedResponseError(f"response is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("tokens"), str):
        raise MalformedResponseError("response must be an object with a string 'tokens' field")
    logits = doc.get("class_logits")
    if logits is not None:
        if not isinstance(logits, list) or not all(
            isinstance(row, list) and row and all(isinstance(v, (int, float)) for v in row)
            for row in logits
        ):
            raise MalformedResponseError("class_logits must be a list of non-empty float lists")
        logits = tuple(tuple(float(v) for v in row) for row in logits)
        check_vocab = vocab if vocab is not None else Vocabulary(max_coord=896)
        parsed, _ = detokenize(doc["tokens"], check_vocab, mode="lenient")
        if len(logits) != len(parsed.lines):
            raise MalformedResponseError(
                f"class_logits rows ({len(logits)}) != parsed lines ({len(parsed.lines)})"
            )
    return GenResponse(token_string=doc["tokens"], class_logits=logits)


class SubprocessGenerator:
    """Adapter speaking the JSON-lines wire protocol over a child process'
    stdin/stdout: one request per line, one response per line, in order."""

    def __init__(self, cmd: str | Sequence[str], timeout_s: float = 60.0, vocab: Vocabulary | None = None):
        self.cmd = shlex.split(cmd) if isinstance(cmd, str) else list(cmd)
        self.timeout_s = timeout_s
        self.vocab = vocab
        self._proc: subprocess.Popen | None = None

    def _ensure(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.cmd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                bufsize=1,
            )
        return self._proc

    def _read_line(self, proc: subprocess.Popen) -> str:
        deadline = time.monotonic() + self.timeout_s
        buf = ""
        fd = proc.stdout.fileno()
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                proc.kill()
                raise GeneratorTimeoutError(f"no response within {self.timeout_s}s")
            ready, _, _ = select.select([fd], [], [], min(remaining, 0.25))
            if not ready:
                continue
            chunk = proc.stdout.readline()
            if chunk == "":
                code = proc.wait()
                raise GeneratorExitError(f"generator closed its output (exit code {code})")
            buf += chunk
            if buf.endswith("\n"):
                return buf

    def __call__(self, request: GenRequest) -> GenResponse:
        proc = self._ensure()
        try:
            proc.stdin.write(json.dumps(_request_payload(request)) + "\n")
            proc.stdin.flush()
        except BrokenPipeError:
            code = proc.wait()
            raise GeneratorExitError(f"generator exited early (exit code {code})") from None
        line = self._read_line(proc)
        return _parse_response(line, self.vocab)

    def close(self):
        if self._proc is not None and self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except Exception:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
        self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def subprocess_generate(
    request: GenRequest,
    cmd: str | Sequence[str],
    timeout_s: float = 60.0,
    vocab: Vocabulary | None = None,
) -> GenResponse:
    """One-shot wire-protocol exchange with a fresh child process."""
    argv = shlex.split(cmd) if isinstance(cmd, str) else list(cmd)
    proc = subprocess.Popen(
        argv,
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        stderr=subprocess.DEVNULL,
        text=True,
    )
    try:
        out, _ = proc.communicate(json.dumps(_request_payload(request)) + "\n", timeout=timeout_s)
    except subprocess.TimeoutExpired:
        proc.kill()
        proc.wait()
        raise GeneratorTimeoutError(f"no response within {timeout_s}s") from None
    if proc.returncode != 0:
        raise GeneratorExitError(f"generator exited with code {proc.returncode}")
    lines = [ln for ln in out.splitlines() if ln.strip()]
    if not lines:
        raise MalformedResponseError("generator produced no response line")
    return _parse_response(lines[0], vocab)
