"""SVG rendering of a thickness design.

Each wall is one ``<line>``. Stroke width is proportional to thickness.
Live designable walls are colored on a linear RGB ramp from ``COOL`` at
``t_min`` to ``WARM`` at ``t_max``; nondesignable walls are solid black;
killed walls are not drawn.
"""
from __future__ import annotations

import numpy as np

from .lattice import DesignSpace, ValidationError

COOL = (44, 123, 182)
WARM = (215, 25, 28)
CANVAS_PX = 480.0
MARGIN_PX = 24.0
LEGEND_PX = 56.0


def thickness_color(t: float, t_min: float, t_max: float) -> str:
    s = 0.0 if t_max <= t_min else min(max((t - t_min) / (t_max - t_min), 0.0), 1.0)
    r, g, b = (round(c0 + s * (c1 - c0)) for c0, c1 in zip(COOL, WARM))
    return f"#{r:02x}{g:02x}{b:02x}"


def render_svg(ds: DesignSpace, thickness, alive, t_min: float, t_max: float,
               stroke_px_per_mm: float = 3.0) -> str:
    thickness = np.asarray(thickness, dtype=float)
    alive = np.asarray(alive, dtype=bool)
    if thickness.shape != (ds.n_walls,) or alive.shape != (ds.n_walls,):
        raise ValidationError("design", f"design has {len(thickness)} walls, geometry has {ds.n_walls}")

    scale = CANVAS_PX / max(ds.length_L, ds.width_W)
    width = 2 * MARGIN_PX + ds.length_L * scale
    height = 2 * MARGIN_PX + ds.width_W * scale + LEGEND_PX
    dx, dy = ds.cell_size

    def px(x, y):
        return MARGIN_PX + x * scale, MARGIN_PX + (ds.width_W - y) * scale

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.2f}" height="{height:.2f}" '
        f'viewBox="0 0 {width:.2f} {height:.2f}">',
        '<defs><linearGradient id="ramp" x1="0" y1="0" x2="1" y2="0">'
        f'<stop offset="0" stop-color="{thickness_color(t_min, t_min, t_max)}"/>'
        f'<stop offset="1" stop-color="{thickness_color(t_max, t_min, t_max)}"/>'
        '</linearGradient></defs>',
        f'<rect x="0" y="0" width="{width:.2f}" height="{height:.2f}" fill="white"/>',
        '<g stroke-linecap="square">',
    ]
    for w, t, a in zip(ds.walls, thickness, alive):
        if not a:
            continue
        (ax, ay), (bx, by) = w.endpoints
        x1, y1 = px(ax * dx, ay * dy)
        x2, y2 = px(bx * dx, by * dy)
        color = thickness_color(t, t_min, t_max) if w.designable else "#000000"
        out.append(f'<line id="wall-{w.id}" x1="{x1:.3f}" y1="{y1:.3f}" x2="{x2:.3f}" y2="{y2:.3f}" '
                   f'stroke="{color}" stroke-width="{max(t, 0.0) * stroke_px_per_mm:.3f}"/>')
    out.append("</g>")

    ly = height - LEGEND_PX + 12
    bar_w = min(200.0, width - 2 * MARGIN_PX)
    out += [
        '<g font-family="sans-serif" font-size="11">',
        f'<rect x="{MARGIN_PX:.2f}" y="{ly:.2f}" width="{bar_w:.2f}" height="12" fill="url(#ramp)"/>',
        f'<text x="{MARGIN_PX:.2f}" y="{ly + 26:.2f}">t_min {t_min:g} mm</text>',
        f'<text x="{MARGIN_PX + bar_w:.2f}" y="{ly + 26:.2f}" text-anchor="end">t_max {t_max:g} mm</text>',
        "</g>",
        "</svg>",
    ]
    return "\n".join(out) + "\n"
