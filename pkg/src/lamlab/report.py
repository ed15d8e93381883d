"""Aggregation, SVG line charts and the grid-world summary table."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

__all__ = [
    "aggregate",
    "svg_line_chart",
    "write_figures",
    "grid_summary",
    "grid_orderings",
    "grid_summary_markdown",
    "TABLE_LAYOUT",
]

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")

# (group, row label, grid setting); the low-noise run is every group's baseline
TABLE_LAYOUT = (
    ("noise", "No noise", "no_noise"),
    ("noise", "Low noise", "low_noise"),
    ("noise", "High noise", "high_noise"),
    ("policy", "Uniform policy", "low_noise"),
    ("policy", "Correlated policy", "correlated_policy"),
    ("augmentation", "No data augmentation", "low_noise"),
    ("augmentation", "Data augmentation", "augmentation"),
    ("action", "No action prediction", "low_noise"),
    ("action", "1% action prediction", "action_prediction"),
)


def mean_se(values) -> tuple[float, float, int]:
    v = np.asarray([x for x in values if x is not None and np.isfinite(x)], dtype=float)
    if v.size == 0:
        return float("nan"), float("nan"), 0
    se = float(np.std(v, ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se, int(v.size)


def aggregate(rows: list[dict], keys: tuple[str, ...], metric: str) -> dict[tuple, tuple[float, float, int]]:
    """Mean, standard error and count of ``metric`` over successful rows grouped by ``keys``."""
    groups = defaultdict(list)
    for r in rows:
        if r.get("status") == "ok":
            groups[tuple(r.get(k) for k in keys)].append(r.get(metric))
    return {k: mean_se(v) for k, v in sorted(groups.items(), key=lambda kv: tuple(-1 if x is None else x for x in kv[0]))}


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    return list(np.linspace(lo, hi, n))


def svg_line_chart(
    series: dict[str, list[tuple[float, float]]],
    title: str = "",
    x_label: str = "",
    y_label: str = "",
    width: int = 480,
    height: int = 320,
) -> str:
    """Polyline chart with axes, ticks and a legend, as an SVG string."""
    margin_l, margin_r, margin_t, margin_b = 60, 130, 30, 45
    pw, ph = width - margin_l - margin_r, height - margin_t - margin_b
    pts = [p for s in series.values() for p in s if np.isfinite(p[1])]
    xs = [p[0] for p in pts] or [0.0, 1.0]
    ys = [p[1] for p in pts] or [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    pad = 0.05 * (y1 - y0) if y1 > y0 else 0.5
    y0, y1 = y0 - pad, y1 + pad

    def sx(x):
        return margin_l + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return margin_t + (1.0 - (y - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-family="sans-serif" font-size="13">{escape(title)}</text>',
        f'<line x1="{margin_l}" y1="{margin_t + ph}" x2="{margin_l + pw}" y2="{margin_t + ph}" stroke="black"/>',
        f'<line x1="{margin_l}" y1="{margin_t}" x2="{margin_l}" y2="{margin_t + ph}" stroke="black"/>',
    ]
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{sx(t):.1f}" y1="{margin_t + ph}" x2="{sx(t):.1f}" y2="{margin_t + ph + 4}" stroke="black"/>')
        out.append(
            f'<text x="{sx(t):.1f}" y="{margin_t + ph + 16}" text-anchor="middle" font-family="sans-serif" font-size="10">{t:.3g}</text>'
        )
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{margin_l - 4}" y1="{sy(t):.1f}" x2="{margin_l}" y2="{sy(t):.1f}" stroke="black"/>')
        out.append(
            f'<text x="{margin_l - 6}" y="{sy(t) + 3:.1f}" text-anchor="end" font-family="sans-serif" font-size="10">{t:.3g}</text>'
        )
    out.append(
        f'<text x="{margin_l + pw / 2:.1f}" y="{height - 8}" text-anchor="middle" font-family="sans-serif" font-size="11">{escape(x_label)}</text>'
    )
    out.append(
        f'<text x="14" y="{margin_t + ph / 2:.1f}" text-anchor="middle" font-family="sans-serif" font-size="11" '
        f'transform="rotate(-90 14 {margin_t + ph / 2:.1f})">{escape(y_label)}</text>'
    )
    for i, (label, s) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        good = [(x, y) for x, y in sorted(s) if np.isfinite(y)]
        if good:
            coords = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in good)
            out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
            for x, y in good:
                out.append(f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="2.5" fill="{color}"/>')
        ly = margin_t + 12 + 16 * i
        lx = margin_l + pw + 12
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 18}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 22}" y="{ly + 4}" font-family="sans-serif" font-size="10">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _series(rows, x_axis, line_axis, metric):
    keys = (line_axis, x_axis) if line_axis else (x_axis,)
    agg = aggregate(rows, keys, metric)
    series = defaultdict(list)
    for key, (m, _, _) in agg.items():
        label = f"{line_axis}={key[0]}" if line_axis else metric
        series[label].append((float(key[-1]), m))
    return dict(series)


def write_figures(cfg, rows: list[dict], out_dir: str | Path) -> list[Path]:
    """One chart per metric: mean over seeds vs the x axis, one line per line-axis value."""
    out_dir = Path(out_dir)
    paths = []
    if cfg.experiment == "table1":
        path = out_dir / "table1.md"
        path.write_text(grid_summary_markdown(grid_summary(rows)))
        return [path]
    for metric in ("llo", "nmse_q", "nmse_eps", "nmse_o"):
        svg = svg_line_chart(
            _series(rows, cfg.x_axis, cfg.line_axis, metric),
            title=f"{cfg.experiment}: {metric}",
            x_label=cfg.x_axis,
            y_label=metric,
        )
        path = out_dir / f"{cfg.experiment}_{metric}.svg"
        path.write_text(svg)
        paths.append(path)
    return paths


def grid_summary(rows: list[dict]) -> list[dict]:
    """The nine-row ablation table: mean and standard error per row over seeds."""
    ctrl = aggregate(rows, ("grid_setting",), "controllable_loss")
    stoch = aggregate(rows, ("grid_setting",), "stochastic_loss")
    out = []
    for group, label, setting in TABLE_LAYOUT:
        c = ctrl.get((setting,), (float("nan"), float("nan"), 0))
        s = stoch.get((setting,), (float("nan"), float("nan"), 0))
        out.append(
            {
                "group": group,
                "setting": label,
                "grid_setting": setting,
                "controllable_mean": c[0],
                "controllable_se": c[1],
                "stochastic_mean": s[0] if s[2] else None,
                "stochastic_se": s[1] if s[2] else None,
                "n_seeds": c[2],
            }
        )
    return out


def _by_setting(summary: list[dict]) -> dict[str, dict]:
    return {r["grid_setting"]: r for r in summary}


def grid_orderings(summary: list[dict]) -> list[tuple[str, bool]]:
    """Expected orderings of mean losses: (description, holds)."""
    s = _by_setting(summary)

    def c(k):
        return s[k]["controllable_mean"] if k in s else float("nan")

    def st(k):
        v = s[k]["stochastic_mean"] if k in s else None
        return float("nan") if v is None else v

    checks = [
        ("controllable: no noise < low noise", c("no_noise") < c("low_noise")),
        ("controllable: low noise < high noise", c("low_noise") < c("high_noise")),
        ("controllable: uniform < correlated policy", c("low_noise") < c("correlated_policy")),
        ("controllable: augmentation < none", c("augmentation") < c("low_noise")),
        ("controllable: 1% labels < none", c("action_prediction") < c("low_noise")),
        ("stochastic: low noise > high noise", st("low_noise") > st("high_noise")),
        ("stochastic: uniform > correlated policy", st("low_noise") > st("correlated_policy")),
        ("stochastic: augmentation > none", st("augmentation") > st("low_noise")),
        ("stochastic: 1% labels > none", st("action_prediction") > st("low_noise")),
    ]
    return [(d, bool(ok)) for d, ok in checks]


def _pm(m, se):
    if m is None or not np.isfinite(m):
        return "--"
    return f"{m:.3f} ± {se:.3f}"


def grid_summary_markdown(summary: list[dict]) -> str:
    lines = ["| Setting | Controllable loss (lower is better) | Stochastic loss (higher is better) |", "|---|---|---|"]
    prev = None
    for r in summary:
        if prev is not None and r["group"] != prev:
            lines.append("| | | |")
        prev = r["group"]
        lines.append(f"| {r['setting']} | {_pm(r['controllable_mean'], r['controllable_se'])} | {_pm(r['stochastic_mean'], r['stochastic_se'])} |")
    lines.append("")
    for desc, ok in grid_orderings(summary):
        lines.append(f"- [{'x' if ok else ' '}] {desc}")
    return "\n".join(lines) + "\n"
