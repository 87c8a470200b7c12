"""On-disk formats: trace CSV, per-epoch metrics CSV, meta sidecar, SVG.

Floats are rendered with repr, the shortest decimal form that parses back
to the identical bit pattern, so a written trace reads back exactly. Probe
columns are left empty when probing was disabled (and on rows a probe
stride skipped); a diverged run's final row may carry non-finite values.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, is_dataclass

import numpy as np

from .analysis import EspMetrics
from .trainer import PROBE_COLUMNS, TRACE_COLUMNS, Trace

__all__ = [
    "write_trace_csv",
    "read_trace_csv",
    "write_epochs_csv",
    "write_meta_json",
    "render_line_chart_svg",
]

_INT_COLUMNS = ("epoch", "step", "global_step")


def _render_float(x: float) -> str:
    return repr(float(x))


def write_trace_csv(trace: Trace, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        int_cols = [getattr(trace, c) for c in _INT_COLUMNS]
        float_cols = [getattr(trace, c) for c in TRACE_COLUMNS[3:]]
        probe_set = set(PROBE_COLUMNS)
        probe_mask = [c in probe_set for c in TRACE_COLUMNS[3:]]
        for i in range(len(trace)):
            row = [str(int(col[i])) for col in int_cols]
            for col, is_probe in zip(float_cols, probe_mask):
                x = col[i]
                if is_probe and math.isnan(x):
                    row.append("")
                else:
                    row.append(_render_float(x))
            writer.writerow(row)


def read_trace_csv(path) -> Trace:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != TRACE_COLUMNS:
            raise ValueError(f"unexpected trace header in {path}: {header}")
        rows = list(reader)
    n = len(rows)
    columns: dict[str, np.ndarray] = {
        name: np.empty(n, dtype=np.int64) for name in _INT_COLUMNS
    }
    for name in TRACE_COLUMNS[3:]:
        columns[name] = np.full(n, np.nan)
    any_probe = False
    for i, row in enumerate(rows):
        if len(row) != len(TRACE_COLUMNS):
            raise ValueError(f"row {i + 2} of {path} has {len(row)} fields")
        for k, name in enumerate(TRACE_COLUMNS):
            cell = row[k]
            if name in _INT_COLUMNS:
                columns[name][i] = int(cell)
            elif cell == "":
                columns[name][i] = np.nan
            else:
                columns[name][i] = float(cell)
                if name in PROBE_COLUMNS:
                    any_probe = True
    return Trace(columns, probes_enabled=any_probe)


def write_epochs_csv(metrics: list[EspMetrics], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "epoch",
                "loss_start",
                "loss_end",
                "rise",
                "drop",
                "amplitude",
                "curvature",
                "concavity_sign",
            ]
        )
        for m in metrics:
            writer.writerow(
                [
                    m.epoch,
                    _render_float(m.loss_start),
                    _render_float(m.loss_end),
                    _render_float(m.rise),
                    _render_float(m.drop),
                    _render_float(m.amplitude),
                    _render_float(m.curvature),
                    m.concavity_sign,
                ]
            )


def _plain(value):
    if is_dataclass(value) and not isinstance(value, type):
        return _plain(asdict(value))
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    return value


def write_meta_json(meta: dict, path) -> None:
    """Stable sidecar: keys sorted, no volatile fields, trailing newline."""
    with open(path, "w") as fh:
        json.dump(_plain(meta), fh, indent=2, sort_keys=True)
        fh.write("\n")


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def render_line_chart_svg(
    path,
    series: list[tuple[str, np.ndarray, np.ndarray]],
    title: str = "",
    x_label: str = "",
    y_label: str = "",
    width: int = 880,
    height: int = 480,
) -> None:
    """Self-contained polyline chart; no external assets or scripts."""
    margin_l, margin_r, margin_t, margin_b = 64, 16, 34, 44
    plot_w = width - margin_l - margin_r
    plot_h = height - margin_t - margin_b

    xs, ys = [], []
    cleaned = []
    for label, x, y in series:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        keep = np.isfinite(x) & np.isfinite(y)
        x, y = x[keep], y[keep]
        cleaned.append((label, x, y))
        if len(x):
            xs.append(x)
            ys.append(y)
    if xs:
        x_min = min(float(np.min(x)) for x in xs)
        x_max = max(float(np.max(x)) for x in xs)
        y_min = min(float(np.min(y)) for y in ys)
        y_max = max(float(np.max(y)) for y in ys)
    else:
        x_min, x_max, y_min, y_max = 0.0, 1.0, 0.0, 1.0
    if x_max == x_min:
        x_max = x_min + 1.0
    if y_max == y_min:
        y_max = y_min + 1.0

    def sx(x: float) -> float:
        return margin_l + (x - x_min) / (x_max - x_min) * plot_w

    def sy(y: float) -> float:
        return margin_t + (1.0 - (y - y_min) / (y_max - y_min)) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin_l}" y1="{margin_t + plot_h}" x2="{margin_l + plot_w}" '
        f'y2="{margin_t + plot_h}" stroke="black"/>',
        f'<line x1="{margin_l}" y1="{margin_t}" x2="{margin_l}" '
        f'y2="{margin_t + plot_h}" stroke="black"/>',
    ]
    if title:
        parts.append(
            f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" '
            f'font-size="14">{title}</text>'
        )
    parts.append(
        f'<text x="{margin_l:.1f}" y="{margin_t + plot_h + 16:.1f}" '
        f'text-anchor="middle">{x_min:g}</text>'
    )
    parts.append(
        f'<text x="{margin_l + plot_w:.1f}" y="{margin_t + plot_h + 16:.1f}" '
        f'text-anchor="middle">{x_max:g}</text>'
    )
    parts.append(
        f'<text x="{margin_l - 6:.1f}" y="{margin_t + plot_h:.1f}" '
        f'text-anchor="end">{y_min:.4g}</text>'
    )
    parts.append(
        f'<text x="{margin_l - 6:.1f}" y="{margin_t + 10:.1f}" '
        f'text-anchor="end">{y_max:.4g}</text>'
    )
    if x_label:
        parts.append(
            f'<text x="{margin_l + plot_w / 2:.1f}" y="{height - 8}" '
            f'text-anchor="middle">{x_label}</text>'
        )
    if y_label:
        parts.append(
            f'<text x="14" y="{margin_t + plot_h / 2:.1f}" text-anchor="middle" '
            f'transform="rotate(-90 14 {margin_t + plot_h / 2:.1f})">{y_label}</text>'
        )
    for k, (label, x, y) in enumerate(cleaned):
        color = _PALETTE[k % len(_PALETTE)]
        if len(x):
            pts = " ".join(f"{sx(float(a)):.2f},{sy(float(b)):.2f}" for a, b in zip(x, y))
            parts.append(
                f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.2"/>'
            )
        if label:
            ly = margin_t + 14 + 16 * k
            lx = margin_l + plot_w - 150
            parts.append(
                f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 22}" y2="{ly - 4}" '
                f'stroke="{color}" stroke-width="2"/>'
            )
            parts.append(f'<text x="{lx + 28}" y="{ly}">{label}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
