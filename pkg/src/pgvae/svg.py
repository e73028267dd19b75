"""Minimal static SVG line plots: axes, ticks, polylines, markers, error bars."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#7f7f7f", "#17becf")
WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=70, right=150, top=40, bottom=60)


@dataclass
class Series:
    label: str
    x: list[float]
    y: list[float]
    err: list[float] | None = None
    dashed: bool = False
    color: str | None = None


@dataclass
class Plot:
    title: str
    x_label: str
    y_label: str
    series: list[Series] = field(default_factory=list)
    x_ticks: list[str] | None = None  # categorical labels at x = 0, 1, ...


def nice_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    """Round-number ticks covering ``[lo, hi]``."""
    if not hi > lo:
        pad = abs(lo) * 0.1 or 1.0
        lo, hi = lo - pad, hi + pad
    raw = (hi - lo) / target
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.floor(lo / step) * step
    ticks = []
    v = start
    while v <= hi + step * 1e-9:
        ticks.append(round(v, 12))
        v += step
    if ticks[-1] < hi:
        ticks.append(round(v, 12))
    return ticks


def _fmt_tick(v: float) -> str:
    return f"{v:.6g}"


def render(plot: Plot) -> str:
    xs = [v for s in plot.series for v in s.x]
    ys = [v for s in plot.series for y, e in zip(s.y, s.err or [0.0] * len(s.y)) for v in (y - e, y + e)]
    finite_y = [v for v in ys if math.isfinite(v)]
    if not xs or not finite_y:
        raise ValueError("nothing to plot")
    if plot.x_ticks is not None:
        x_ticks = list(range(len(plot.x_ticks)))
        x_lo, x_hi = -0.5, len(plot.x_ticks) - 0.5
    else:
        x_ticks = nice_ticks(min(xs), max(xs))
        x_lo, x_hi = x_ticks[0], x_ticks[-1]
    y_ticks = nice_ticks(min(finite_y), max(finite_y))
    y_lo, y_hi = y_ticks[0], y_ticks[-1]

    left, top = MARGIN["left"], MARGIN["top"]
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(x):
        return left + (x - x_lo) / (x_hi - x_lo) * pw

    def py(y):
        return top + ph - (y - y_lo) / (y_hi - y_lo) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{left + pw / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(plot.title)}</text>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for i, t in enumerate(x_ticks):
        label = plot.x_ticks[i] if plot.x_ticks is not None else _fmt_tick(t)
        x = px(t)
        out.append(f'<line x1="{x:.1f}" y1="{top + ph}" x2="{x:.1f}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{x:.1f}" y="{top + ph + 18}" text-anchor="middle">{escape(label)}</text>')
    for t in y_ticks:
        y = py(t)
        out.append(f'<line x1="{left - 5}" y1="{y:.1f}" x2="{left}" y2="{y:.1f}" stroke="black"/>')
        out.append(f'<line x1="{left}" y1="{y:.1f}" x2="{left + pw}" y2="{y:.1f}" stroke="#e5e5e5"/>')
        out.append(f'<text x="{left - 8}" y="{y + 4:.1f}" text-anchor="end">{_fmt_tick(t)}</text>')
    out.append(
        f'<text x="{left + pw / 2:.1f}" y="{HEIGHT - 15}" text-anchor="middle">{escape(plot.x_label)}</text>'
    )
    out.append(
        f'<text x="18" y="{top + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 18 {top + ph / 2:.1f})">{escape(plot.y_label)}</text>'
    )

    for k, s in enumerate(plot.series):
        color = s.color or PALETTE[k % len(PALETTE)]
        pts = [(px(x), py(y)) for x, y in zip(s.x, s.y) if math.isfinite(y)]
        dash = ' stroke-dasharray="6 4"' if s.dashed else ""
        if len(pts) > 1:
            path = " ".join(f"{a:.1f},{b:.1f}" for a, b in pts)
            out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="2"{dash}/>')
        for i, (a, b) in enumerate(pts):
            if s.err is not None and math.isfinite(s.err[i]) and s.err[i] > 0:
                y0, y1 = py(s.y[i] - s.err[i]), py(s.y[i] + s.err[i])
                out.append(f'<line x1="{a:.1f}" y1="{y0:.1f}" x2="{a:.1f}" y2="{y1:.1f}" stroke="{color}"/>')
            out.append(f'<circle cx="{a:.1f}" cy="{b:.1f}" r="3.5" fill="{color}"/>')
        ly = top + 14 + 18 * k
        lx = left + pw + 12
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/>')
        out.append(f'<text x="{lx + 26}" y="{ly + 4}">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
