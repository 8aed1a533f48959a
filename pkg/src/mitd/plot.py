"""Dependency-free SVG scatter/line chart of empty-string log-prob vs training size."""
from __future__ import annotations

import math
from html import escape
from typing import Sequence

WIDTH, HEIGHT = 800, 500
MARGIN = {"left": 90, "right": 30, "top": 40, "bottom": 70}


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi == lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    out = []
    v = start
    while v <= hi + 1e-12 * abs(step):
        out.append(round(v, 12))
        v += step
    return out


def render_curve_svg(points: Sequence[tuple[float, float]],
                     title: str = "Mean empty-string log-probability vs. training size") -> str:
    """Render points as circles joined by a polyline; x is log-scaled when all sizes are positive."""
    if len(points) < 2:
        raise ValueError("need at least two points to plot")
    pts = sorted((float(x), float(y)) for x, y in points)
    log_x = all(x > 0 for x, _ in pts)
    fx = (lambda v: math.log10(v)) if log_x else (lambda v: v)
    xs = [fx(x) for x, _ in pts]
    ys = [y for _, y in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    pad = 0.1 * (y1 - y0) if y1 > y0 else 1.0
    y0, y1 = y0 - pad, y1 + pad
    L, R, T, B = MARGIN["left"], WIDTH - MARGIN["right"], MARGIN["top"], HEIGHT - MARGIN["bottom"]

    def px(v):
        return L + (v - x0) / (x1 - x0) * (R - L)

    def py(v):
        return B - (v - y0) / (y1 - y0) * (B - T)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2:.1f}" y="24" text-anchor="middle" font-size="16">{escape(title)}</text>',
           f'<path class="axis" d="M{L},{B} L{R},{B}" stroke="black" fill="none"/>',
           f'<path class="axis" d="M{L},{B} L{L},{T}" stroke="black" fill="none"/>']
    if log_x:
        xticks = [float(10**e) for e in range(math.ceil(x0 - 1e-9), math.floor(x1 + 1e-9) + 1)]
    else:
        xticks = _ticks(x0, x1)
    for t in xticks:
        X = px(fx(t))
        label = f"{t:g}"
        out.append(f'<line x1="{X:.2f}" y1="{B}" x2="{X:.2f}" y2="{B + 5}" stroke="black"/>')
        out.append(f'<text x="{X:.2f}" y="{B + 20}" text-anchor="middle" font-size="12">{label}</text>')
    for t in _ticks(y0, y1):
        Y = py(t)
        out.append(f'<line x1="{L - 5}" y1="{Y:.2f}" x2="{L}" y2="{Y:.2f}" stroke="black"/>')
        out.append(f'<text x="{L - 8}" y="{Y + 4:.2f}" text-anchor="end" font-size="12">{t:g}</text>')
    xlabel = "training set size (log scale)" if log_x else "training set size"
    out.append(f'<text x="{(L + R) / 2:.1f}" y="{HEIGHT - 20}" text-anchor="middle" font-size="14">{xlabel}</text>')
    out.append(f'<text x="20" y="{(T + B) / 2:.1f}" text-anchor="middle" font-size="14" '
               f'transform="rotate(-90 20 {(T + B) / 2:.1f})">mean empty-string log-probability</text>')
    coords = [(px(x), py(y)) for x, y in zip(xs, ys)]
    out.append('<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="'
               + " ".join(f"{X:.2f},{Y:.2f}" for X, Y in coords) + '"/>')
    for X, Y in coords:
        out.append(f'<circle cx="{X:.2f}" cy="{Y:.2f}" r="4" fill="steelblue"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
