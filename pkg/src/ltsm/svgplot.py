"""Small standalone SVG renderer for the figure pipelines.

Data series are emitted as <polyline> (line plots) or <circle> (scatter);
axes, ticks and legend swatches use <line>/<text> so the polyline count in a
file equals its series count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]

WIDTH, HEIGHT = 640, 440
MARGIN = {"left": 70, "right": 30, "top": 40, "bottom": 50}


@dataclass
class PlotSpec:
    x: str
    y: list[str]
    kind: str = "line"  # line | scatter
    logx: bool = False
    logy: bool = False
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("line", "scatter"):
            raise ValueError(f"plot kind must be 'line' or 'scatter', got '{self.kind}'")
        if not self.y:
            raise ValueError("plot needs at least one y column")


def read_csv_columns(path) -> tuple[list[str], np.ndarray]:
    """Header + float matrix from a CSV, skipping # comment lines."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ValueError(f"{path}: no data")
    header = lines[0].split(",")
    rows = [[float(v) for v in ln.split(",")] for ln in lines[1:]]
    if not rows:
        raise ValueError(f"{path}: no data")
    return header, np.asarray(rows)


def _scale(values, lo, hi, out_lo, out_hi, log, axis, col):
    values = np.atleast_1d(np.asarray(values, dtype=float))
    if log:
        bad = np.nonzero(values <= 0)[0]
        if len(bad):
            raise ValueError(
                f"log-scale {axis} axis needs positive values; column '{col}' row {bad[0] + 1} "
                f"is {values[bad[0]]:g}"
            )
        values, lo, hi = np.log10(values), np.log10(lo), np.log10(hi)
    if hi == lo:
        return np.full_like(values, 0.5 * (out_lo + out_hi))
    return out_lo + (values - lo) * (out_hi - out_lo) / (hi - lo)


def _ticks(lo, hi, log):
    if log:
        raw = np.geomspace(lo, hi, 5)
    else:
        raw = np.linspace(lo, hi, 5)
    return raw


def write_svg_plot(csv_path, spec: PlotSpec, out_path) -> str:
    """Render columns of csv_path per spec into a standalone SVG at out_path."""
    header, data = read_csv_columns(csv_path)
    for col in [spec.x, *spec.y]:
        if col not in header:
            raise ValueError(f"{csv_path}: missing column '{col}' (have {', '.join(header)})")
    xs = data[:, header.index(spec.x)]
    series = [data[:, header.index(c)] for c in spec.y]

    x0, x1 = MARGIN["left"], WIDTH - MARGIN["right"]
    y0, y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]
    xlo, xhi = float(xs.min()), float(xs.max())
    all_y = np.concatenate(series)
    ylo, yhi = float(all_y.min()), float(all_y.max())
    if spec.logx and xlo <= 0:
        _scale(xs, 1, 1, 0, 1, True, "x", spec.x)
    for col, ys in zip(spec.y, series):
        if spec.logy:
            _scale(ys, 1, 1, 0, 1, True, "y", col)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
    ]
    if spec.title:
        parts.append(f'<text x="{WIDTH / 2}" y="22" text-anchor="middle" font-size="15">{spec.title}</text>')
    for tv in _ticks(xlo, xhi, spec.logx):
        px = _scale(tv, xlo, xhi, x0, x1, spec.logx, "x", spec.x)[0]
        parts.append(f'<line x1="{px:.2f}" y1="{y0}" x2="{px:.2f}" y2="{y0 + 5}" stroke="black"/>')
        parts.append(f'<text x="{px:.2f}" y="{y0 + 18}" text-anchor="middle">{tv:.3g}</text>')
    for tv in _ticks(ylo, yhi, spec.logy):
        py = _scale(tv, ylo, yhi, y0, y1, spec.logy, "y", "y")[0]
        parts.append(f'<line x1="{x0 - 5}" y1="{py:.2f}" x2="{x0}" y2="{py:.2f}" stroke="black"/>')
        parts.append(f'<text x="{x0 - 8}" y="{py + 4:.2f}" text-anchor="end">{tv:.3g}</text>')
    parts.append(
        f'<text x="{(x0 + x1) / 2}" y="{HEIGHT - 12}" text-anchor="middle">{spec.xlabel or spec.x}</text>'
    )
    ylabel = spec.ylabel or ", ".join(spec.y)
    parts.append(
        f'<text x="18" y="{(y0 + y1) / 2}" text-anchor="middle" '
        f'transform="rotate(-90 18 {(y0 + y1) / 2})">{ylabel}</text>'
    )

    labels = spec.labels or spec.y
    for i, (ys, label) in enumerate(zip(series, labels)):
        color = PALETTE[i % len(PALETTE)]
        px = _scale(xs, xlo, xhi, x0, x1, spec.logx, "x", spec.x)
        py = _scale(ys, ylo, yhi, y0, y1, spec.logy, "y", spec.y[i])
        if spec.kind == "line":
            pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))
            parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.8"/>')
        else:
            parts.extend(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="3" fill="{color}"/>' for a, b in zip(px, py))
        ly = y1 + 16 * i
        parts.append(f'<line x1="{x1 - 110}" y1="{ly}" x2="{x1 - 90}" y2="{ly}" stroke="{color}" stroke-width="3"/>')
        parts.append(f'<text x="{x1 - 84}" y="{ly + 4}">{label}</text>')
    parts.append("</svg>")
    with open(out_path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
    return str(out_path)
