"""Rendering: SVG export of vector maps and matplotlib report figures.

The SVG path embeds map coordinates directly (no scaling), one path per
line. matplotlib is imported lazily so library users without the report
path never load it.
"""
from __future__ import annotations

import csv
from pathlib import Path
from xml.sax.saxutils import escape

from .model import LineCategory, VectorMap

CATEGORY_COLORS = {
    LineCategory.Curb: "#d62728",
    LineCategory.LaneLine: "#1f77b4",
    LineCategory.VirtualLine: "#2ca02c",
}

INSTANCE_PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
    "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)


def _fmt(v: float) -> str:
    return f"{v:g}"


def render_svg(m: VectorMap, by_instance: bool = False, stroke_width: float = 6.0) -> str:
    """One SVG path per line, stroke width 6, colored by category or, with
    ``by_instance``, cycling a fixed palette per line."""
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(m.width_px)}" '
        f'height="{_fmt(m.height_px)}" viewBox="0 0 {_fmt(m.width_px)} {_fmt(m.height_px)}">',
    ]
    for i, line in enumerate(m.lines):
        color = INSTANCE_PALETTE[i % len(INSTANCE_PALETTE)] if by_instance else CATEGORY_COLORS[line.category]
        coords = " L ".join(f"{_fmt(p.x)} {_fmt(p.y)}" for p in line.points)
        parts.append(
            f'<path id="{escape(line.id, {chr(34): "&quot;"})}" d="M {coords}" fill="none" '
            f'stroke="{color}" stroke-width="{_fmt(stroke_width)}" '
            'stroke-linecap="round" stroke-linejoin="round"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def report_rows(report: dict) -> list[tuple[str, float]]:
    """Flatten a metric report into (metric, value) rows for delimited output."""
    rows: list[tuple[str, float]] = []
    for d, v in report["ap_c"].items():
        rows.append((f"ap_c_{d}", v))
    rows.append(("ap_m", report["ap_m"]))
    rows.append(("ap_m_50", report["ap_m_50"]))
    rows.append(("ap_m_75", report["ap_m_75"]))
    rows.append(("miou", report["miou"]))
    for cat, v in report["per_category_iou"].items():
        rows.append((f"iou_{cat}", v))
    return rows


def write_report_csv(report: dict, path: Path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for name, value in report_rows(report):
            writer.writerow([name, f"{value:.6f}"])


def save_eval_figures(
    report: dict,
    curves: dict,
    pred: VectorMap,
    gt: VectorMap,
    out_dir: Path,
) -> list[Path]:
    """Render the report figures: PR curves for the chamfer thresholds and
    a prediction-over-ground-truth map overlay."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []

    fig, ax = plt.subplots(figsize=(6, 5))
    for name, (recall, precision, ap) in sorted(curves.items()):
        if not name.startswith("chamfer@") or len(recall) == 0:
            continue
        ax.plot(recall, precision, label=f"{name} (AP={ap:.3f})", drawstyle="steps-post")
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    ax.set_title("chamfer-matched precision/recall")
    ax.legend(loc="lower left", fontsize=8)
    fig.tight_layout()
    pr_path = out_dir / "pr_curves.png"
    fig.savefig(pr_path, dpi=120)
    plt.close(fig)
    paths.append(pr_path)

    fig, ax = plt.subplots(figsize=(7, 7))
    for line in gt.lines:
        xs = [p.x for p in line.points]
        ys = [p.y for p in line.points]
        ax.plot(xs, ys, color="0.8", linewidth=2.0, zorder=1)
    for line in pred.lines:
        xs = [p.x for p in line.points]
        ys = [p.y for p in line.points]
        ax.plot(xs, ys, color=CATEGORY_COLORS[line.category], linewidth=1.0, zorder=2)
    ax.set_xlim(0, gt.width_px)
    ax.set_ylim(gt.height_px, 0)  # image convention: y down
    ax.set_aspect("equal")
    ax.set_title(f"prediction (color) vs ground truth (gray), mIoU={report['miou']:.3f}")
    fig.tight_layout()
    overlay_path = out_dir / "map_overlay.png"
    fig.savefig(overlay_path, dpi=120)
    plt.close(fig)
    paths.append(overlay_path)
    return paths
