"""Minimal SVG scatter plots (MLE vs posterior) without a plotting library."""

from __future__ import annotations

from html import escape
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

PANEL_W, PANEL_H, MARGIN = 360, 360, 48


def _panel(x, y, title: str, x0: float) -> list:
    ok = np.isfinite(x) & np.isfinite(y)
    x, y = np.asarray(x, float)[ok], np.asarray(y, float)[ok]
    parts = [f'<g transform="translate({x0:.1f},0)">']
    inner = PANEL_W - 2 * MARGIN
    if x.size:
        lo = float(min(x.min(), y.min()))
        hi = float(max(x.max(), y.max()))
    else:
        lo, hi = 0.0, 1.0
    if hi <= lo:
        hi = lo + 1.0

    def sx(v):
        return MARGIN + (v - lo) / (hi - lo) * inner

    def sy(v):
        return PANEL_H - MARGIN - (v - lo) / (hi - lo) * inner

    parts.append(
        f'<rect x="{MARGIN}" y="{MARGIN}" width="{inner}" height="{inner}" '
        'fill="none" stroke="#444"/>'
    )
    parts.append(
        f'<line x1="{sx(lo):.2f}" y1="{sy(lo):.2f}" x2="{sx(hi):.2f}" y2="{sy(hi):.2f}" '
        'stroke="#c33" stroke-dasharray="4 3"/>'
    )
    for a, b in zip(x, y):
        parts.append(f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="2" fill="#1f5fa8" fill-opacity="0.5"/>')
    parts.append(f'<text x="{PANEL_W / 2:.0f}" y="{MARGIN - 16}" text-anchor="middle" '
                 f'font-size="13">{escape(title)}</text>')
    parts.append(f'<text x="{PANEL_W / 2:.0f}" y="{PANEL_H - 12}" text-anchor="middle" '
                 'font-size="11">per-item MLE</text>')
    parts.append(f'<text x="14" y="{PANEL_H / 2:.0f}" text-anchor="middle" font-size="11" '
                 f'transform="rotate(-90 14 {PANEL_H / 2:.0f})">posterior estimate</text>')
    parts.append(f'<text x="{MARGIN}" y="{PANEL_H - MARGIN + 14}" font-size="9">{lo:.3g}</text>')
    parts.append(f'<text x="{PANEL_W - MARGIN}" y="{PANEL_H - MARGIN + 14}" font-size="9" '
                 f'text-anchor="end">{hi:.3g}</text>')
    parts.append("</g>")
    return parts


def write_scatter_svg(path, panels: Sequence[tuple]) -> None:
    """Write side-by-side scatter panels with identity lines.

    ``panels`` is a sequence of ``(x, y, title)`` tuples.
    """
    width = PANEL_W * len(panels)
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{PANEL_H}" '
        f'viewBox="0 0 {width} {PANEL_H}" font-family="sans-serif">',
        '<rect width="100%" height="100%" fill="white"/>',
    ]
    for k, (x, y, title) in enumerate(panels):
        out.extend(_panel(x, y, title, k * PANEL_W))
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")


def fmt_stat(value: Optional[float], digits: int = 4) -> str:
    return "n/a" if value is None else f"{value:.{digits}f}"
