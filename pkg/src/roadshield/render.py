"""Deterministic SVG rendering of scenarios and traces.

Hand-rolled SVG keeps the output diffable and the dependency list short.
Numbers are written with a fixed format, so identical inputs give
byte-identical files.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .dynamics import obstacle_pose
from .scenario import Scenario
from .smc import Trace

__all__ = ["trajectory_svg", "distance_svg"]

_W = 800
_H = 600
_MARGIN = 30.0


def _f(v: float) -> str:
    return f"{v:.3f}"


def _poly_points(pts, tx, ty) -> str:
    return " ".join(f"{_f(tx(px))},{_f(ty(py))}" for px, py in pts)


def _bounds(sc: Scenario):
    xs, ys = [], []
    for lane in sc.road:
        for px, py in lane:
            xs.append(px)
            ys.append(py)
    for r in (sc.goal_region, *sc.static_obstacles):
        xs.append(r.x)
        ys.append(r.y)
    return min(xs), max(xs), min(ys), max(ys)


def _transforms(x0, x1, y0, y1):
    sx = (_W - 2 * _MARGIN) / max(x1 - x0, 1e-9)
    sy = (_H - 2 * _MARGIN) / max(y1 - y0, 1e-9)
    s = min(sx, sy)

    def tx(x):
        return _MARGIN + (x - x0) * s

    def ty(y):
        return _H - _MARGIN - (y - y0) * s

    return tx, ty


def trajectory_svg(sc: Scenario, traces: Sequence[Trace]) -> str:
    """Road, goal, obstacle footprints over time, and vehicle trajectories."""
    x0, x1, y0, y1 = _bounds(sc)
    pad = 0.05 * max(x1 - x0, y1 - y0, 1.0)
    tx, ty = _transforms(x0 - pad, x1 + pad, y0 - pad, y1 + pad)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
             f'viewBox="0 0 {_W} {_H}">',
             f'<rect width="{_W}" height="{_H}" fill="white"/>']
    for lane in sc.road:
        parts.append(f'<polygon points="{_poly_points(lane, tx, ty)}" '
                     'fill="#d9d9d9" stroke="#888888" stroke-width="1"/>')
    g = sc.goal_region
    parts.append(f'<polygon points="{_poly_points(g.corners(), tx, ty)}" '
                 'fill="#b7e0b0" stroke="#2e7d32" stroke-width="1"/>')
    for r in sc.static_obstacles:
        parts.append(f'<polygon points="{_poly_points(r.corners(), tx, ty)}" '
                     'fill="#555555"/>')
    for tr in sc.moving_obstacles:
        for k in range(sc.n_sense + 1):
            rect = obstacle_pose(tr, k * sc.timing.c1)
            parts.append(f'<polygon points="{_poly_points(rect.corners(), tx, ty)}" '
                         'fill="none" stroke="#e08030" stroke-width="1"/>')
    for trace in traces:
        pts = [(float(x), float(y)) for x, y in zip(trace.rows["x"], trace.rows["y"])]
        parts.append(f'<polyline points="{_poly_points(pts, tx, ty)}" '
                     'fill="none" stroke="#1f5fbf" stroke-width="1" opacity="0.55"/>')
    if traces:
        first = traces[0].rows[0]
        from . import _kernels as K
        c = np.empty((4, 2))
        K.rect_corners(float(first["x"]), float(first["y"]), sc.vehicle.length,
                       sc.vehicle.width, float(first["head"]), c)
        parts.append(f'<polygon points="{_poly_points(c, tx, ty)}" '
                     'fill="none" stroke="#1f5fbf" stroke-width="2"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def distance_svg(sc: Scenario, traces: Sequence[Trace]) -> str:
    """Obstacle distance vs time per trace, with the unsafe threshold line."""
    maxt = float(sc.timing.maxt)
    threshold = 3.0 * sc.td
    dmax = threshold * 1.2
    for tr in traces:
        finite = tr.rows["dis"][np.isfinite(tr.rows["dis"])]
        if finite.size:
            dmax = max(dmax, float(finite.max()))

    def tx(t):
        return _MARGIN + (t / maxt) * (_W - 2 * _MARGIN)

    def ty(d):
        return _H - _MARGIN - (d / dmax) * (_H - 2 * _MARGIN)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
             f'viewBox="0 0 {_W} {_H}">',
             f'<rect width="{_W}" height="{_H}" fill="white"/>',
             f'<line x1="{_f(_MARGIN)}" y1="{_f(_H - _MARGIN)}" '
             f'x2="{_f(_W - _MARGIN)}" y2="{_f(_H - _MARGIN)}" stroke="black"/>',
             f'<line x1="{_f(_MARGIN)}" y1="{_f(_MARGIN)}" '
             f'x2="{_f(_MARGIN)}" y2="{_f(_H - _MARGIN)}" stroke="black"/>']
    for tr in traces:
        pts = []
        for row in tr.rows:
            d = float(row["dis"])
            if math.isfinite(d):
                pts.append((tx(float(row["t"])), ty(min(d, dmax))))
        if len(pts) >= 2:
            body = " ".join(f"{_f(px)},{_f(py)}" for px, py in pts)
            parts.append(f'<polyline points="{body}" fill="none" '
                         'stroke="#1f5fbf" stroke-width="1" opacity="0.5"/>')
    parts.append(f'<line x1="{_f(tx(0))}" y1="{_f(ty(threshold))}" '
                 f'x2="{_f(tx(maxt))}" y2="{_f(ty(threshold))}" '
                 'stroke="#cc1111" stroke-width="2"/>')
    parts.append(f'<text x="{_f(_W - _MARGIN - 160)}" y="{_f(ty(threshold) - 6)}" '
                 f'fill="#cc1111" font-size="13">unsafe threshold = {_f(threshold)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
