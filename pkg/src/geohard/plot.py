"""Dependency-free SVG scatter plots of 2-D layouts."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .errors import NeedsE2, SizeMismatch

PALETTE = (
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)

WIDTH, HEIGHT = 720, 540
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 60, 170, 30, 50


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def render_scatter(coords: np.ndarray, labels: Sequence[str], classes: Sequence[str] | None = None, title: str = "") -> str:
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise NeedsE2(f"scatter plots need E=2 coordinates, got shape {coords.shape}")
    if coords.shape[0] != len(labels):
        raise SizeMismatch(f"{coords.shape[0]} points for {len(labels)} labels")
    classes = list(classes) if classes is not None else list(dict.fromkeys(labels))
    color = {c: PALETTE[i % len(PALETTE)] for i, c in enumerate(classes)}

    if coords.shape[0]:
        lo, hi = coords.min(axis=0), coords.max(axis=0)
    else:
        lo, hi = np.zeros(2), np.ones(2)
    span = np.where(hi > lo, hi - lo, 1.0)
    lo, hi = lo - 0.05 * span, hi + 0.05 * span
    pw = WIDTH - MARGIN_L - MARGIN_R
    ph = HEIGHT - MARGIN_T - MARGIN_B

    def sx(x):
        return MARGIN_L + (x - lo[0]) / (hi[0] - lo[0]) * pw

    def sy(y):
        return MARGIN_T + ph - (y - lo[1]) / (hi[1] - lo[1]) * ph

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>',
    ]
    if title:
        out.append(f'<text x="{MARGIN_L}" y="20" font-family="sans-serif" font-size="14">{escape(title)}</text>')
    x0, y0 = MARGIN_L, MARGIN_T + ph
    out.append('<g id="axes" stroke="#000000" stroke-width="1">')
    out.append(f'<line x1="{x0}" y1="{y0}" x2="{x0 + pw}" y2="{y0}"/>')
    out.append(f'<line x1="{x0}" y1="{MARGIN_T}" x2="{x0}" y2="{y0}"/>')
    for t in _ticks(lo[0], hi[0]):
        x = sx(t)
        out.append(f'<line x1="{x:.2f}" y1="{y0}" x2="{x:.2f}" y2="{y0 + 5}"/>')
    for t in _ticks(lo[1], hi[1]):
        y = sy(t)
        out.append(f'<line x1="{x0 - 5}" y1="{y:.2f}" x2="{x0}" y2="{y:.2f}"/>')
    out.append("</g>")
    out.append('<g id="tick-labels" font-family="sans-serif" font-size="10" fill="#000000">')
    for t in _ticks(lo[0], hi[0]):
        out.append(f'<text x="{sx(t):.2f}" y="{y0 + 18}" text-anchor="middle">{t:.3g}</text>')
    for t in _ticks(lo[1], hi[1]):
        out.append(f'<text x="{x0 - 8}" y="{sy(t) + 3:.2f}" text-anchor="end">{t:.3g}</text>')
    out.append("</g>")

    out.append('<g id="points" fill-opacity="0.7">')
    for (x, y), lab in zip(coords, labels):
        out.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3" fill="{color.get(lab, "#000000")}"/>')
    out.append("</g>")

    out.append('<g id="legend" font-family="sans-serif" font-size="12">')
    lx = WIDTH - MARGIN_R + 20
    for i, c in enumerate(classes):
        ly = MARGIN_T + 10 + 20 * i
        out.append(f'<rect x="{lx}" y="{ly - 9}" width="10" height="10" fill="{color[c]}"/>')
        out.append(f'<text x="{lx + 16}" y="{ly}">{escape(c)}</text>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_scatter(coords: np.ndarray, labels: Sequence[str], path: str | os.PathLike, classes: Sequence[str] | None = None, title: str = "") -> None:
    """Write a scatter plot with one ``<circle>`` per point; identical input gives identical bytes."""
    svg = render_scatter(coords, labels, classes, title)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_text(svg, encoding="utf-8", newline="\n")
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()
