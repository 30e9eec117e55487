"""Minimal log-log SVG charts written as plain text."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


@dataclass
class Series:
    label: str
    x: Sequence[float]
    y: Sequence[float]
    style: str = "points"  # "points" or "line"


def _ticks(lo: float, hi: float) -> list[float]:
    span = hi - lo
    step = 10 ** math.floor(math.log10(span)) if span > 0 else 1.0
    if span / step < 3:
        step /= 2
    start = math.ceil(lo / step) * step
    out = []
    t = start
    while t <= hi + 1e-12:
        out.append(round(t, 10))
        t += step
    return out


def loglog_svg(series: Sequence[Series], title: str, xlabel: str, ylabel: str,
               width: int = 640, height: int = 440) -> str:
    """Chart of ``log10 |y|`` against ``log10 x``; nonpositive x and zero or nan y are skipped."""
    pts = []
    for s in series:
        pts.append([(math.log10(a), math.log10(abs(b))) for a, b in zip(s.x, s.y)
                    if a > 0 and b == b and b != 0])
    flat = [p for ps in pts for p in ps]
    if not flat:
        raise ValueError("nothing to plot")
    x0, x1 = min(p[0] for p in flat), max(p[0] for p in flat)
    y0, y1 = min(p[1] for p in flat), max(p[1] for p in flat)
    padx = 0.05 * (x1 - x0 or 1.0)
    pady = 0.05 * (y1 - y0 or 1.0)
    x0, x1, y0, y1 = x0 - padx, x1 + padx, y0 - pady, y1 + pady
    ml, mr, mt, mb = 70, 20, 40, 55
    pw, ph = width - ml - mr, height - mt - mb

    def X(v):
        return ml + (v - x0) / (x1 - x0) * pw

    def Y(v):
        return mt + (y1 - v) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="14">{_esc(title)}</text>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{X(t):.2f}" y1="{mt + ph}" x2="{X(t):.2f}" y2="{mt + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{X(t):.2f}" y="{mt + ph + 18}" text-anchor="middle">{t:g}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{ml - 5}" y1="{Y(t):.2f}" x2="{ml}" y2="{Y(t):.2f}" stroke="black"/>')
        out.append(f'<text x="{ml - 8}" y="{Y(t) + 4:.2f}" text-anchor="end">{t:g}</text>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 12}" text-anchor="middle">{_esc(xlabel)}</text>')
    out.append(f'<text transform="translate(16,{mt + ph / 2:.1f}) rotate(-90)" text-anchor="middle">{_esc(ylabel)}</text>')
    for i, (s, ps) in enumerate(zip(series, pts)):
        color = PALETTE[i % len(PALETTE)]
        if s.style == "line" and len(ps) >= 2:
            path = " ".join(f"{X(a):.2f},{Y(b):.2f}" for a, b in ps)
            out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-dasharray="6,4"/>')
        else:
            out += [f'<circle cx="{X(a):.2f}" cy="{Y(b):.2f}" r="4" fill="{color}"/>' for a, b in ps]
        ly = mt + 16 + 16 * i
        out.append(f'<rect x="{ml + 10}" y="{ly - 9}" width="10" height="10" fill="{color}"/>')
        out.append(f'<text x="{ml + 26}" y="{ly}">{_esc(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
