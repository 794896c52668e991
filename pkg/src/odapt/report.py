"""Markdown tables and SVG plots rendered from results.json.

The renderer formats numbers and computes the delta rows; every other
value it prints comes straight out of the results file (the matrix command
precomputes the per-pair means it reports). Identical input bytes yield
identical output bytes, SVG included.
"""

from __future__ import annotations

from typing import Sequence


def _pts(x: float) -> str:
    return f"{100 * x:.1f}"


def _pair_arrow(pair: str) -> str:
    src, tgt = pair.split(":", 1)
    return f"{src} → {tgt}"


def render_matrix_table(summary: list[dict], n_t: int, seeds: Sequence[int]) -> str:
    """Per-pair means with the paper-style Method x Pair layout."""
    if not summary:
        return "No matrix rows.\n"
    pairs = [s["pair"] for s in summary]
    header = "| Method | " + " | ".join(_pair_arrow(p) for p in pairs) + " | Mean |"
    sep = "|---" * (len(pairs) + 2) + "|"

    def row(label: str, key: str) -> str:
        vals = [s[key] for s in summary]
        mean = sum(vals) / len(vals)
        return f"| {label} | " + " | ".join(_pts(v) for v in vals) + f" | {_pts(mean)} |"

    def delta_row() -> str:
        deltas = [s["odapt"] - s["source_only"] for s in summary]
        mean = sum(deltas) / len(deltas)
        cells = " | ".join(f"{100 * d:+.1f}" for d in deltas)
        return f"| Δ (ODAPT − source) | {cells} | {100 * mean:+.1f} |"

    lines = [
        f"Top-1 accuracy, mean over seeds {list(seeds)}, {n_t} annotated target frames.",
        "",
        header,
        sep,
        row("Source only", "source_only"),
        row("Fully-supervised", "fully_supervised"),
        row("ODAPT", "odapt"),
        delta_row(),
    ]
    return "\n".join(lines) + "\n"


def render_seed_table(rows: list[dict]) -> str:
    if not rows:
        return "No rows.\n"
    header = "| Pair | Seed | Source only | ODAPT | Fully-supervised | Δ ODAPT |"
    sep = "|---|---|---|---|---|---|"
    lines = [header, sep]
    for r in rows:
        pair = f"{r['source_domain']} → {r['target_domain']}"
        lines.append(
            f"| {pair} | {r['seed']} | {_pts(r['accuracy_source_only'])} | "
            f"{_pts(r['accuracy_odapt'])} | {_pts(r['accuracy_fully_supervised'])} | "
            f"{100 * r['delta_odapt']:+.1f} |"
        )
    return "\n".join(lines) + "\n"


def render_frames_table(data: dict) -> str:
    header = "| Fine-tuning frames | " + " | ".join(str(p["n_t"]) for p in data["points"]) + " |"
    sep = "|---" * (len(data["points"]) + 1) + "|"
    acc = "| ODAPT top-1 | " + " | ".join(_pts(p["mean_accuracy"]) for p in data["points"]) + " |"
    lines = [
        f"Budget sweep on {_pair_arrow(data['pair'])}, mean over seeds {data['seeds']} "
        f"(source only: {_pts(data['source_only_mean'])}).",
        "",
        header,
        sep,
        acc,
    ]
    return "\n".join(lines) + "\n"


def render_encoder_table(rows: list[dict]) -> str:
    header = "| Pair | Object encoder | ODAPT top-1 |"
    sep = "|---|---|---|"
    lines = [header, sep]
    for r in rows:
        mode = "on" if r["encoder_mode"] == "on" else "off (identity)"
        lines.append(f"| {_pair_arrow(r['pair'])} | {mode} | {_pts(r['mean_accuracy'])} |")
    return "\n".join(lines) + "\n"


def svg_line_plot(
    xs: Sequence[float],
    ys: Sequence[float],
    title: str,
    xlabel: str,
    ylabel: str,
    baseline: float | None = None,
    width: int = 480,
    height: int = 320,
) -> str:
    """Minimal deterministic line chart (fixed layout, fixed float formats)."""
    if len(xs) != len(ys) or not xs:
        raise ValueError("xs and ys must be equal-length and non-empty")
    ml, mr, mt, mb = 56.0, 16.0, 34.0, 46.0
    pw, ph = width - ml - mr, height - mt - mb
    x0, x1 = min(xs), max(xs)
    all_y = list(ys) + ([baseline] if baseline is not None else [])
    y0, y1 = min(all_y), max(all_y)
    xr = (x1 - x0) or 1.0
    ypad = (y1 - y0) * 0.1 or 1.0
    y0, y1 = y0 - ypad, y1 + ypad
    yr = y1 - y0

    def sx(x: float) -> float:
        return ml + (x - x0) / xr * pw

    def sy(y: float) -> float:
        return mt + (1 - (y - y0) / yr) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.2f}" y="18" text-anchor="middle" font-size="13">{title}</text>',
        f'<line x1="{ml:.2f}" y1="{mt:.2f}" x2="{ml:.2f}" y2="{mt + ph:.2f}" stroke="black"/>',
        f'<line x1="{ml:.2f}" y1="{mt + ph:.2f}" x2="{ml + pw:.2f}" y2="{mt + ph:.2f}" stroke="black"/>',
    ]
    for x in xs:
        px = sx(x)
        parts.append(f'<line x1="{px:.2f}" y1="{mt + ph:.2f}" x2="{px:.2f}" y2="{mt + ph + 4:.2f}" stroke="black"/>')
        parts.append(f'<text x="{px:.2f}" y="{mt + ph + 16:.2f}" text-anchor="middle">{x:g}</text>')
    for i in range(5):
        yv = y0 + yr * i / 4
        py = sy(yv)
        parts.append(f'<line x1="{ml - 4:.2f}" y1="{py:.2f}" x2="{ml:.2f}" y2="{py:.2f}" stroke="black"/>')
        parts.append(
            f'<line x1="{ml:.2f}" y1="{py:.2f}" x2="{ml + pw:.2f}" y2="{py:.2f}" stroke="#dddddd"/>'
        )
        parts.append(f'<text x="{ml - 8:.2f}" y="{py + 4:.2f}" text-anchor="end">{yv:.1f}</text>')
    if baseline is not None:
        by = sy(baseline)
        parts.append(
            f'<line x1="{ml:.2f}" y1="{by:.2f}" x2="{ml + pw:.2f}" y2="{by:.2f}" '
            'stroke="#888888" stroke-dasharray="5,4"/>'
        )
    pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
    parts.append(f'<polyline points="{pts}" fill="none" stroke="#1f6fb2" stroke-width="2"/>')
    for x, y in zip(xs, ys):
        parts.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3" fill="#1f6fb2"/>')
    parts.append(
        f'<text x="{ml + pw / 2:.2f}" y="{height - 8:.2f}" text-anchor="middle">{xlabel}</text>'
    )
    parts.append(
        f'<text x="14" y="{mt + ph / 2:.2f}" text-anchor="middle" '
        f'transform="rotate(-90 14 {mt + ph / 2:.2f})">{ylabel}</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def frames_ablation_svg(data: dict) -> str:
    xs = [p["n_t"] for p in data["points"]]
    ys = [100 * p["mean_accuracy"] for p in data["points"]]
    return svg_line_plot(
        xs,
        ys,
        title=f"Accuracy vs fine-tuning frames ({_pair_arrow(data['pair'])})",
        xlabel="annotated target frames",
        ylabel="top-1 accuracy",
        baseline=100 * data["source_only_mean"],
    )


def render_report(data: dict) -> tuple[str, dict[str, str]]:
    """Full report from a results.json payload -> (markdown, extra files)."""
    assets: dict[str, str] = {}
    lines = ["# Adaptation study report", "", f"Config digest: `{data.get('config_digest', '')}`", ""]

    rows = data.get("rows", [])
    lines.append("## Adaptation matrix")
    lines.append("")
    if not rows:
        lines.append("No rows.")
        lines.append("")
    else:
        summary = data.get("matrix_summary", [])
        n_t = rows[0]["n_t"]
        seeds = sorted({r["seed"] for r in rows})
        lines.append(render_matrix_table(summary, n_t, seeds))
        lines.append("### Per-seed results")
        lines.append("")
        lines.append(render_seed_table(rows))

    if "frames_ablation" in data:
        lines.append("## Annotation budget sweep")
        lines.append("")
        lines.append(render_frames_table(data["frames_ablation"]))
        assets["frames_ablation.svg"] = frames_ablation_svg(data["frames_ablation"])
        lines.append("![accuracy vs budget](frames_ablation.svg)")
        lines.append("")

    if "encoder_ablation" in data:
        lines.append("## Object encoder ablation")
        lines.append("")
        lines.append(render_encoder_table(data["encoder_ablation"]))

    return "\n".join(lines).rstrip() + "\n", assets
