"""Deterministic SVG heatmaps of per-cell values."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

from .mesh import Mesh2D

LOW = (12, 12, 36)
HIGH = (250, 214, 64)
WIDTH = 640
MARGIN = 20
LEGEND_H = 50


def ramp(t) -> np.ndarray:
    """Linear color ramp from LOW (t=0) to HIGH (t=1) as integer RGB rows."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)[..., None]
    return np.rint(np.array(LOW) + t * (np.array(HIGH) - np.array(LOW))).astype(int)


def normalized(values) -> tuple[np.ndarray, float, float]:
    v = np.asarray(values, dtype=float)
    lo, hi = float(v.min()), float(v.max())
    t = np.zeros_like(v) if hi == lo else (v - lo) / (hi - lo)
    return t, lo, hi


def _hex(rgb) -> str:
    return "#{:02x}{:02x}{:02x}".format(*(int(c) for c in rgb))


def svg_heatmap(mesh: Mesh2D, values, title: str = "") -> str:
    """Cells filled by value on a linear ramp, with a min/max legend.

    ``values`` holds one entry per cell; longer arrays (graph node fields whose
    first entries are the cells) are truncated to the cell count.
    """
    v = np.asarray(values, dtype=float).reshape(-1)
    if len(v) < mesh.n_cells:
        raise ValueError(f"{len(v)} values for {mesh.n_cells} cells")
    v = v[:mesh.n_cells]
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite values cannot be plotted")
    t, lo, hi = normalized(v)
    colors = ramp(t)

    pts = mesh.points
    xmin, ymin = pts.min(axis=0)
    xmax, ymax = pts.max(axis=0)
    scale = (WIDTH - 2 * MARGIN) / max(xmax - xmin, ymax - ymin, 1e-300)
    height = int(np.ceil((ymax - ymin) * scale)) + 2 * MARGIN + LEGEND_H
    sx = MARGIN + (pts[:, 0] - xmin) * scale
    sy = MARGIN + (ymax - pts[:, 1]) * scale

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" '
        f'viewBox="0 0 {WIDTH} {height}">',
        f"<title>{escape(title)}</title>",
        '<rect width="100%" height="100%" fill="#ffffff"/>',
        '<g stroke="none">',
    ]
    for cell, rgb in zip(mesh.cells, colors):
        coords = " ".join(f"{sx[i]:.3f},{sy[i]:.3f}" for i in cell)
        out.append(f'<polygon points="{coords}" fill="{_hex(rgb)}"/>')
    out.append("</g>")

    y0 = height - LEGEND_H + 10
    bar_w = WIDTH - 2 * MARGIN
    out.append('<defs><linearGradient id="ramp">'
               f'<stop offset="0" stop-color="{_hex(LOW)}"/><stop offset="1" stop-color="{_hex(HIGH)}"/>'
               "</linearGradient></defs>")
    out.append(f'<rect class="legend" x="{MARGIN}" y="{y0}" width="{bar_w}" height="12" fill="url(#ramp)"/>')
    out.append(f'<text x="{MARGIN}" y="{y0 + 28}" font-size="12" font-family="monospace">min {lo:.6g}</text>')
    out.append(f'<text x="{WIDTH - MARGIN}" y="{y0 + 28}" font-size="12" font-family="monospace" '
               f'text-anchor="end">max {hi:.6g}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
