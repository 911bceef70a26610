"""Tiny static SVG line plots (polylines, axes, legend); no dependencies.

Output is plain text and deterministic: coordinates are rounded to fixed
precision so identical inputs produce identical bytes.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

__all__ = ["line_plot"]

PALETTE = ("#2a7e43", "#d97818", "#3558a0", "#a03535",
           "#6a4a9c", "#3f8f8f", "#8a8a23", "#777777")

_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 62, 16, 34, 46


def _fmt(x: float) -> str:
    return f"{x:.2f}".rstrip("0").rstrip(".")


def _ticks(lo: float, hi: float, want: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / want
    mag = 10.0 ** math.floor(math.log10(raw))
    step = min(s * mag for s in (1, 2, 5, 10) if s * mag >= raw)
    first = math.ceil(lo / step) * step
    out = []
    t = first
    while t <= hi + 1e-9 * step:
        out.append(0.0 if abs(t) < step * 1e-9 else t)
        t += step
    return out


def _tick_label(t: float) -> str:
    if t == int(t) and abs(t) < 1e6:
        return str(int(t))
    return f"{t:g}"


def line_plot(
    path,
    series: Sequence[tuple[str, Sequence[float], Sequence[float]]],
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    width: int = 640,
    height: int = 420,
    logx: bool = False,
    logy: bool = False,
    y_range: Optional[tuple[float, float]] = None,
) -> None:
    """Write a line plot; ``series`` holds (label, xs, ys) triples."""
    pts = [(x, y) for _, xs, ys in series for x, y in zip(xs, ys)
           if math.isfinite(x) and math.isfinite(y)
           and (not logy or y > 0) and (not logx or x > 0)]
    if not pts:
        raise ValueError("nothing to plot")
    xs_all = [math.log10(p[0]) if logx else p[0] for p in pts]
    ys_all = [math.log10(p[1]) if logy else p[1] for p in pts]
    x_lo, x_hi = min(xs_all), max(xs_all)
    if y_range is not None:
        y_lo, y_hi = y_range
        if logy:
            y_lo, y_hi = math.log10(y_lo), math.log10(y_hi)
    else:
        y_lo, y_hi = min(ys_all), max(ys_all)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    px0, px1 = _MARGIN_L, width - _MARGIN_R
    py0, py1 = height - _MARGIN_B, _MARGIN_T

    def sx(x: float) -> float:
        if logx:
            x = math.log10(x)
        return px0 + (x - x_lo) / (x_hi - x_lo) * (px1 - px0)

    def sy(y: float) -> float:
        if logy:
            y = math.log10(y)
        return py0 + (y - y_lo) / (y_hi - y_lo) * (py1 - py0)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        '<g font-family="sans-serif" font-size="12" fill="#222">',
    ]
    if title:
        out.append(f'<text x="{width / 2:.0f}" y="20" text-anchor="middle" '
                   f'font-size="14">{title}</text>')

    # axes, ticks, grid
    out.append(f'<line x1="{px0}" y1="{py0}" x2="{px1}" y2="{py0}" '
               'stroke="#222"/>')
    out.append(f'<line x1="{px0}" y1="{py0}" x2="{px0}" y2="{py1}" '
               'stroke="#222"/>')
    for t in _ticks(x_lo, x_hi):
        x = px0 + (t - x_lo) / (x_hi - x_lo) * (px1 - px0)
        xlab = _tick_label(10.0 ** t if logx else t) if not logx or \
            t == int(t) else f"{10.0 ** t:.2g}"
        out.append(f'<line x1="{_fmt(x)}" y1="{py0}" x2="{_fmt(x)}" '
                   f'y2="{py0 + 4}" stroke="#222"/>')
        out.append(f'<text x="{_fmt(x)}" y="{py0 + 18}" '
                   f'text-anchor="middle">{xlab}</text>')
    for t in _ticks(y_lo, y_hi):
        y = py0 + (t - y_lo) / (y_hi - y_lo) * (py1 - py0)
        label = _tick_label(10.0 ** t if logy else t) if not logy or \
            t == int(t) else f"{10.0 ** t:.2g}"
        out.append(f'<line x1="{px0 - 4}" y1="{_fmt(y)}" x2="{px0}" '
                   f'y2="{_fmt(y)}" stroke="#222"/>')
        out.append(f'<text x="{px0 - 7}" y="{_fmt(y + 4)}" '
                   f'text-anchor="end">{label}</text>')
        out.append(f'<line x1="{px0}" y1="{_fmt(y)}" x2="{px1}" '
                   f'y2="{_fmt(y)}" stroke="#ddd" stroke-width="0.5"/>')
    if xlabel:
        out.append(f'<text x="{(px0 + px1) / 2:.0f}" y="{height - 10}" '
                   f'text-anchor="middle">{xlabel}</text>')
    if ylabel:
        out.append(f'<text x="16" y="{(py0 + py1) / 2:.0f}" '
                   f'text-anchor="middle" '
                   f'transform="rotate(-90 16 {(py0 + py1) / 2:.0f})">'
                   f'{ylabel}</text>')

    for i, (label, xs, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        coords = [(sx(x), sy(y)) for x, y in zip(xs, ys)
                  if math.isfinite(x) and math.isfinite(y)
                  and (not logy or y > 0) and (not logx or x > 0)]
        if not coords:
            continue
        points = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in coords)
        out.append(f'<polyline points="{points}" fill="none" '
                   f'stroke="{color}" stroke-width="1.5"/>')
        ly = _MARGIN_T + 14 * i
        out.append(f'<line x1="{px1 - 110}" y1="{ly}" x2="{px1 - 90}" '
                   f'y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{px1 - 84}" y="{ly + 4}">{label}</text>')

    out.append("</g></svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out))
        fh.write("\n")
