"""Command-line entry points: serialize, stitch, eval, render, augment,
geolink and import of native annotation files.

Every command is deterministic given its inputs and --seed; repeated runs
produce byte-identical outputs. Exit code 0 iff no errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .augment import AugmentSweepConfig, crop_patch, generate_augmentation_sweep, rotate_patch_sample
from .codec import CodecError, Vocabulary, serialize_map
from .geolink import (
    GeoPoint,
    PromptMode,
    PvFieldSpec,
    PvPose,
    build_prompt,
    latlon_to_pixel,
    pv_field_crop,
    sample_pv_frames,
)
from .metrics import ApConfig, RasterSpec, evaluate, evaluate_per_category
from .model import (
    LineCategory,
    LineType,
    Point2,
    SchemaError,
    VectorMap,
    vector_map_from_json,
    vector_map_to_json,
)
from .render import render_svg, save_eval_figures, write_report_csv
from .sampling import SamplingConfig, reorder_lines, resample_equidistant
from .stitch import (
    GeneratorError,
    NoisyOracleGenerator,
    OracleGenerator,
    StitchConfig,
    SubprocessGenerator,
    plan_patches,
    run_state_update,
    unmatched_cut_endpoints,
)

log = logging.getLogger("lanemap")


def _dump_json(obj, path: Path | None):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _load_map(path: str) -> VectorMap:
    with open(path) as fh:
        doc = json.load(fh)
    return vector_map_from_json(doc)


def _apply_config_file(args: argparse.Namespace, parser: argparse.ArgumentParser):
    """--config JSON mirrors flags (keys with - or _); explicit flags win
    because the config only replaces values still at their defaults."""
    if not getattr(args, "config", None):
        return
    with open(args.config) as fh:
        cfg = json.load(fh)
    defaults = {a.dest: parser.get_default(a.dest) for a in parser._actions}
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            raise SystemExit(f"--config: unknown option {key!r}")
        if getattr(args, dest) == defaults.get(dest):
            setattr(args, dest, value)


def _cmd_serialize(args, parser) -> int:
    _apply_config_file(args, parser)
    try:
        m = _load_map(args.input)
    except SchemaError as exc:
        log.error("schema violation: %s", exc)
        return 1
    if not args.no_resample:
        cfg = SamplingConfig(interval_m=args.interval_m)
        m = replace(
            m, lines=tuple(resample_equidistant(ln, cfg, m.meters_per_pixel) for ln in m.lines)
        )
    if not args.no_reorder:
        m = reorder_lines(m)
    try:
        seq = serialize_map(m, Vocabulary(max_coord=args.max_coord))
    except CodecError as exc:
        log.error("%s", exc)
        return 1
    if args.out is None:
        sys.stdout.write(seq.rendered + "\n")
    else:
        Path(args.out).write_text(seq.rendered)
    return 0


def _parse_generator_spec(spec: str, args):
    if spec.startswith("oracle:"):
        return OracleGenerator(_load_map(spec[len("oracle:"):]))
    if spec.startswith("noisy:"):
        body = spec[len("noisy:"):]
        parts = body.rsplit(",", 2)
        path, sigma, drop = parts[0], 0.0, 0.0
        if len(parts) >= 2 and parts[1]:
            try:
                sigma = float(parts[1])
            except ValueError:
                path, sigma = body, 0.0
        if len(parts) == 3 and parts[2]:
            drop = float(parts[2])
        return NoisyOracleGenerator(_load_map(path), sigma_px=sigma, drop_prob=drop, seed=args.seed)
    if spec.startswith("exec:"):
        return SubprocessGenerator(spec[len("exec:"):], timeout_s=args.timeout)
    raise SystemExit(f"unknown generator spec {spec!r} (use oracle:, noisy: or exec:)")


def _cmd_stitch(args, parser) -> int:
    _apply_config_file(args, parser)
    cfg = StitchConfig(
        patch_size_px=args.patch_size,
        context_band_px=args.context_band,
        join_tolerance_px=args.join_tolerance,
        meters_per_pixel=args.mpp,
        fail_fast=args.fail_fast,
    )
    generator = _parse_generator_spec(args.generator, args)
    try:
        result = run_state_update(
            args.width,
            args.height,
            generator,
            cfg,
            prompts=args.prompt,
            bev_image_ref=args.bev_image,
        )
    except GeneratorError as exc:
        log.error("generator failure: %s", exc)
        return 1
    finally:
        if isinstance(generator, SubprocessGenerator):
            generator.close()
    _dump_json(vector_map_to_json(result.map), Path(args.out))
    leftovers = unmatched_cut_endpoints(result.map)
    n_patches = len(plan_patches(args.width, args.height, cfg))
    per_patch = [{"patch_id": k, "events": []} for k in range(n_patches)]
    for d in result.diagnostics:
        per_patch[d.patch_id]["events"].append({"stage": d.stage, "message": d.message})
    diag_doc = {
        "patches": per_patch,
        "unmatched_interior_cut_endpoints": len(leftovers),
    }
    diag_path = Path(args.diagnostics) if args.diagnostics else Path(args.out).with_suffix(".diag.json")
    _dump_json(diag_doc, diag_path)
    for d in result.diagnostics:
        log.warning("patch %d [%s]: %s", d.patch_id, d.stage, d.message)
    # lenient-parse recoveries are by-design; generator failures are errors
    failures = [d for d in result.diagnostics if d.stage == "generate"]
    if failures:
        log.error("%d patch(es) failed to generate", len(failures))
        return 1
    return 0


def _cmd_eval(args, parser) -> int:
    _apply_config_file(args, parser)
    try:
        pred = _load_map(args.pred)
        gt = _load_map(args.gt)
    except SchemaError as exc:
        log.error("schema violation: %s", exc)
        return 1
    if (pred.width_px, pred.height_px) != (gt.width_px, gt.height_px):
        log.error(
            "frame mismatch: pred %sx%s vs gt %sx%s",
            pred.width_px, pred.height_px, gt.width_px, gt.height_px,
        )
        return 1
    spec = RasterSpec(int(gt.width_px), int(gt.height_px), line_width_px=args.line_width)
    report, curves = evaluate(pred, gt, ApConfig(), spec, collect_curves=True)
    if args.per_category:
        report["per_category_ap_c"] = evaluate_per_category(pred, gt, ApConfig(), spec)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _dump_json(report, out_dir / "report.json")
    write_report_csv(report, out_dir / "report.csv")
    if not args.no_figures:
        save_eval_figures(report, curves, pred, gt, out_dir)
    return 0


def _cmd_render(args, parser) -> int:
    _apply_config_file(args, parser)
    try:
        m = _load_map(args.input)
    except SchemaError as exc:
        log.error("schema violation: %s", exc)
        return 1
    Path(args.out).write_text(render_svg(m, by_instance=args.by_instance))
    return 0


def _cmd_augment(args, parser) -> int:
    _apply_config_file(args, parser)
    try:
        m = _load_map(args.input)
    except SchemaError as exc:
        log.error("schema violation: %s", exc)
        return 1
    if args.angles:
        angles = tuple(float(a) for a in str(args.angles).split(","))
    else:
        angles = AugmentSweepConfig().angles_deg
    cfg = AugmentSweepConfig(
        patch_size_px=args.patch_size,
        stride_a=args.stride_a,
        stride_b=args.stride_b,
        angles_deg=angles,
        post_rotations_deg=() if args.no_rotations else (90, 180, 270),
        use_grid_a=args.grids in ("a", "both"),
        use_grid_b=args.grids in ("b", "both"),
    )
    frames = generate_augmentation_sweep(m.width_px, m.height_px, cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    parent_id = Path(args.input).stem
    manifest_lines = []
    index = 0
    for frame in frames:
        base = crop_patch(m, frame)
        for rot in (0,) + tuple(cfg.post_rotations_deg):
            sample = base if rot == 0 else rotate_patch_sample(base, rot)
            doc = {
                "frame": {
                    "cx": frame.center.x,
                    "cy": frame.center.y,
                    "angle": frame.angle_deg,
                    "size": cfg.patch_size_px,
                },
                "post_rotation": sample.post_rotation_deg,
                "map": vector_map_to_json(sample.lines),
            }
            _dump_json(doc, out_dir / f"patch_{index:06d}.json")
            manifest_lines.append(
                json.dumps(
                    {
                        "center": [frame.center.x, frame.center.y],
                        "angle": frame.angle_deg,
                        "post_rotation": sample.post_rotation_deg,
                        "parent_id": parent_id,
                    },
                    sort_keys=True,
                )
            )
            index += 1
    (out_dir / "manifest.jsonl").write_text("\n".join(manifest_lines) + ("\n" if manifest_lines else ""))
    log.info("wrote %d patch samples", index)
    return 0


def _cmd_geolink(args, parser) -> int:
    _apply_config_file(args, parser)
    with open(args.origin) as fh:
        origin = json.load(fh)
    for key in ("origin_x", "origin_y", "zoom"):
        if key not in origin:
            log.error("tile-origin sidecar missing %r", key)
            return 1
    try:
        m = _load_map(args.annotations)
    except SchemaError as exc:
        log.error("schema violation: %s", exc)
        return 1
    poses = []
    skipped = []
    with open(args.poses) as fh:
        for line_no, raw in enumerate(fh):
            raw = raw.strip()
            if not raw:
                continue
            doc = json.loads(raw)
            gp = GeoPoint(lat=doc["lat"], lon=doc["lon"])
            gpix = latlon_to_pixel(gp, origin["zoom"])
            local = Point2(gpix.x - origin["origin_x"], gpix.y - origin["origin_y"])
            if not (0 <= local.x <= m.width_px and 0 <= local.y <= m.height_px):
                log.warning("pose line %d outside image extent; skipped", line_no)
                skipped.append(line_no)
                continue
            poses.append({"path": doc["path"], "pose": PvPose(local, doc["heading"])})
    sampled = sample_pv_frames(poses, max_n=args.max_frames)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    field = PvFieldSpec()
    pv_meta = []
    for k, entry in enumerate(sampled):
        pose = entry["pose"]
        cropped = pv_field_crop(m, pose, field)
        doc = {
            "path": entry["path"],
            "pose": {"x": pose.position.x, "y": pose.position.y, "heading": pose.heading_deg},
            "map": vector_map_to_json(cropped),
        }
        _dump_json(doc, out_dir / f"pv_gt_{k:03d}.json")
        pv_meta.append((pose.position.x, pose.position.y, pose.heading_deg))
    prompts = {
        "pv_only": build_prompt(PromptMode.PV_ONLY, pv_meta=pv_meta) if pv_meta else None,
        "bev_pv": build_prompt(PromptMode.BEV_PV, pv_meta=pv_meta) if pv_meta else None,
        "bev_only": build_prompt(PromptMode.BEV_ONLY),
    }
    _dump_json(
        {"prompts": prompts, "sampled": len(sampled), "skipped_pose_lines": skipped},
        out_dir / "prompts.json",
    )
    return 0


_CATEGORY_KEYWORDS = (("curb", LineCategory.Curb), ("virtual", LineCategory.VirtualLine))
_TYPE_KEYWORDS = (
    ("thick", LineType.ThickSolid),
    ("short", LineType.ShortDashed),
    ("dash", LineType.Dashed),
    ("solid", LineType.Solid),
)


def _cmd_import(args, parser) -> int:
    """Best-effort conversion of a LabelMe-style native annotation file."""
    _apply_config_file(args, parser)
    with open(args.input) as fh:
        doc = json.load(fh)
    if "shapes" not in doc:
        log.error("input does not look like a native annotation file (no 'shapes')")
        return 1
    lines = []
    for i, shape in enumerate(doc["shapes"]):
        pts = shape.get("points") or []
        if len(pts) < 2:
            log.warning("shape %d has < 2 points; skipped", i)
            continue
        label = str(shape.get("label", "")).lower()
        category = LineCategory.LaneLine
        for needle, cat in _CATEGORY_KEYWORDS:
            if needle in label:
                category = cat
                break
        attrs = shape.get("attributes") or shape.get("flags") or {}
        type_text = str(attrs.get("line_type", attrs.get("type", ""))).lower()
        line_type = LineType.Other
        for needle, lt in _TYPE_KEYWORDS:
            if needle in type_text:
                line_type = lt
                break
        lines.append(
            {
                "id": str(shape.get("id", f"s{i}")),
                "points": [[float(x), float(y)] for x, y in pts],
                "category": category.value,
                "line_type": line_type.value,
                "start": "natural",
                "end": "natural",
            }
        )
    out_doc = {
        "width": doc.get("imageWidth", args.width),
        "height": doc.get("imageHeight", args.height),
        "mpp": args.mpp,
        "lines": lines,
    }
    if out_doc["width"] is None or out_doc["height"] is None:
        log.error("image extent unknown; pass --width/--height")
        return 1
    vector_map_from_json(out_doc)  # validate before writing
    _dump_json(out_doc, Path(args.out) if args.out else None)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lanemap", description=__doc__)
    ap.add_argument("--version", action="version", version=f"lanemap {__version__}")
    ap.add_argument("--log-level", default="INFO", help="logging level (default: INFO)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serialize", help="annotation JSON -> token text")
    p.add_argument("input", help="annotation JSON file")
    p.add_argument("-o", "--out", default=None, help="output token file (default: stdout)")
    p.add_argument("--no-resample", action="store_true", help="skip equidistant resampling")
    p.add_argument("--no-reorder", action="store_true", help="skip origin-distance reordering")
    p.add_argument("--interval-m", type=float, default=6.0, help="sampling interval in meters")
    p.add_argument("--max-coord", type=int, default=895, help="largest coordinate token")
    p.add_argument("--config", default=None, help="JSON file mirroring flags")
    p.set_defaults(fn=_cmd_serialize, parser=p)

    p = sub.add_parser("stitch", help="run the state-update loop over a generator")
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--generator", required=True, help="oracle:<gt.json> | noisy:<gt.json>,sigma,drop | exec:<cmd>")
    p.add_argument("-o", "--out", required=True, help="output global map JSON")
    p.add_argument("--diagnostics", default=None, help="diagnostics JSON (default: <out>.diag.json)")
    p.add_argument("--patch-size", type=int, default=896)
    p.add_argument("--context-band", type=float, default=40.0)
    p.add_argument("--join-tolerance", type=float, default=4.0)
    p.add_argument("--mpp", type=float, default=0.15)
    p.add_argument("--seed", type=int, default=0, help="seed for randomized generators")
    p.add_argument("--timeout", type=float, default=60.0, help="exec generator timeout (s)")
    p.add_argument("--prompt", default=None, help="override the per-patch prompt text")
    p.add_argument("--bev-image", default=None, help="opaque BEV image reference passed through")
    p.add_argument("--fail-fast", action="store_true")
    p.add_argument("--config", default=None)
    p.set_defaults(fn=_cmd_stitch, parser=p)

    p = sub.add_parser("eval", help="metric report (JSON + CSV + figures) for pred vs gt")
    p.add_argument("pred", help="predicted map JSON")
    p.add_argument("gt", help="ground-truth map JSON")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--line-width", type=int, default=6, help="raster stroke width in px")
    p.add_argument("--per-category", action="store_true", help="add per-category AP detail")
    p.add_argument("--no-figures", action="store_true", help="skip matplotlib figures")
    p.add_argument("--config", default=None)
    p.set_defaults(fn=_cmd_eval, parser=p)

    p = sub.add_parser("render", help="map JSON -> SVG")
    p.add_argument("input")
    p.add_argument("-o", "--out", required=True, help="output SVG file")
    p.add_argument("--by-instance", action="store_true", help="color per instance instead of category")
    p.add_argument("--config", default=None)
    p.set_defaults(fn=_cmd_render, parser=p)

    p = sub.add_parser("augment", help="overlapped/inclined crop sweep -> patch samples")
    p.add_argument("input", help="annotation JSON file")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--patch-size", type=int, default=896)
    p.add_argument("--stride-a", type=int, default=664)
    p.add_argument("--stride-b", type=int, default=544)
    p.add_argument("--angles", default=None, help="comma list of inclination angles (default: 0,15,30,45,60,75)")
    p.add_argument("--grids", choices=("a", "b", "both"), default="both")
    p.add_argument("--no-rotations", action="store_true", help="skip the 90/180/270 post-rotations")
    p.add_argument("--config", default=None)
    p.set_defaults(fn=_cmd_augment, parser=p)

    p = sub.add_parser("geolink", help="link GPS poses to pixels and crop PV ground truth")
    p.add_argument("--poses", required=True, help="pose manifest JSONL")
    p.add_argument("--origin", required=True, help="tile-origin sidecar JSON")
    p.add_argument("--annotations", required=True, help="annotation JSON")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--max-frames", type=int, default=10)
    p.add_argument("--config", default=None)
    p.set_defaults(fn=_cmd_geolink, parser=p)

    p = sub.add_parser("import", help="convert a native annotation file to the annotation schema")
    p.add_argument("input")
    p.add_argument("-o", "--out", default=None, help="output annotation JSON (default: stdout)")
    p.add_argument("--mpp", type=float, default=0.15)
    p.add_argument("--width", type=int, default=None, help="image width when the file lacks it")
    p.add_argument("--height", type=int, default=None, help="image height when the file lacks it")
    p.add_argument("--config", default=None)
    p.set_defaults(fn=_cmd_import, parser=p)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO))
    try:
        return args.fn(args, args.parser)
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
