"""Numeric hot kernels.

Everything in here is written in the nopython subset so the same source runs
either jitted (numba, the default when importable) or interpreted.  Set
``ROADSHIELD_PURE_NUMPY=1`` to force the interpreted fallback; it produces the
same results, just slowly, and exists for numba-less environments, debugging
and the backend benchmark (``benchmarks/bench_kernels.py``).

Kernels receive plain scalars and pre-baked numpy arrays (obstacle corner
tables, road ring) so they stay free of Python objects.  Scale parameters come
in as the (mul, div) pairs prepared by :class:`roadshield.fixedpoint.ScaleConfig`.
"""

from __future__ import annotations

import math
import os

import numpy as np

from .fixedpoint import SNAP_TOL


def _backend_choice() -> str:
    flag = os.environ.get("ROADSHIELD_PURE_NUMPY", "").strip().lower()
    if flag in {"1", "true", "yes", "on"}:
        return "numpy"
    # the bundled workqueue layer always works; tbb/omp probing is noisy on
    # hosts with stale versions
    os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")
    try:
        import numba  # noqa: F401
    except ImportError:
        return "numpy"
    return "numba"


BACKEND = _backend_choice()
JIT_ENABLED = BACKEND == "numba"

if JIT_ENABLED:
    from numba import njit, prange

    def _jit(fn):
        return njit(cache=True)(fn)

    def _pjit(fn):
        return njit(cache=True, parallel=True)(fn)
else:
    prange = range

    def _jit(fn):
        return fn

    _pjit = _jit


# ---------------------------------------------------------------------------
# fixed-point conversions


@_jit
def i2d(n, mul, div):
    """Significand -> real. Exact: one multiply and one divide by exact ints."""
    return n * mul / div


@_jit
def d2i(x, mul, div, max_sig):
    """Real -> significand, truncating toward zero.

    Quotients within SNAP_TOL (relative) of an integer are treated as that
    integer before truncation, so float noise from the scale multiply cannot
    knock an exact grid point down a step.
    """
    q = x * mul / div
    nearest = math.floor(q + 0.5)
    if abs(q - nearest) <= SNAP_TOL * max(1.0, abs(q)):
        n = int(nearest)
    else:
        n = int(q)
    if n > max_sig or n < -max_sig:
        raise OverflowError("significand overflow in d2i")
    return n


@_jit
def _d2i_flagged(x, mul, div, max_sig):
    """Like :func:`d2i` but returns (n, ok) instead of raising."""
    q = x * mul / div
    nearest = math.floor(q + 0.5)
    if abs(q - nearest) <= SNAP_TOL * max(1.0, abs(q)):
        n = int(nearest)
    else:
        n = int(q)
    if n > max_sig or n < -max_sig:
        return 0, False
    return n, True


# ---------------------------------------------------------------------------
# dead-reckoning sensor update and ground-truth plant integration


@_jit
def sense_core(ix, iy, iv, iacc, ihead, ijerk, iturn, c1, steps,
               rmul, rdiv, fmul, fdiv, max_sig):
    """One sensing-period update of the controller's integer state.

    Converts the integers to reals, runs ``steps`` explicit-Euler sub-steps of
    unit ``c1/steps`` in the fixed order acc, head, v, x (with the fresh v and
    head), y, then re-quantizes.  The order is part of the semantics and must
    not be "improved".
    """
    x = i2d(ix, rmul, rdiv)
    y = i2d(iy, rmul, rdiv)
    v = i2d(iv, rmul, rdiv)
    acc = i2d(iacc, rmul, rdiv)
    head = i2d(ihead, rmul, rdiv)
    jerk = i2d(ijerk, rmul, rdiv)
    turn = i2d(iturn, rmul, rdiv)
    unit = c1 / steps
    for _ in range(steps):
        acc += jerk * unit
        head += turn * unit
        v += acc * unit
        x += v * math.cos(head) * unit
        y += v * math.sin(head) * unit
    return (d2i(x, fmul, fdiv, max_sig), d2i(y, fmul, fdiv, max_sig),
            d2i(v, fmul, fdiv, max_sig), d2i(acc, fmul, fdiv, max_sig),
            d2i(head, fmul, fdiv, max_sig))


@_jit
def plant_core(x, y, v, acc, head, jerk, turn, dt, substeps, xs, ys, heads):
    """Reference integration of the plant ODE over ``dt``.

    Same update order as :func:`sense_core`, finer step.  ``xs``/``ys``/``heads``
    (length ``substeps + 1``) receive the sampled trajectory including the
    start point.
    """
    xs[0] = x
    ys[0] = y
    heads[0] = head
    unit = dt / substeps
    for i in range(substeps):
        acc += jerk * unit
        head += turn * unit
        v += acc * unit
        x += v * math.cos(head) * unit
        y += v * math.sin(head) * unit
        xs[i + 1] = x
        ys[i + 1] = y
        heads[i + 1] = head
    return x, y, v, acc, head


# ---------------------------------------------------------------------------
# oriented-rectangle geometry


@_jit
def rect_corners(cx, cy, length, width, heading, out):
    """Corner coordinates of an oriented rectangle, consistent winding."""
    hl = 0.5 * length
    hw = 0.5 * width
    c = math.cos(heading)
    s = math.sin(heading)
    out[0, 0] = cx + hl * c - hw * s
    out[0, 1] = cy + hl * s + hw * c
    out[1, 0] = cx + hl * c + hw * s
    out[1, 1] = cy + hl * s - hw * c
    out[2, 0] = cx - hl * c + hw * s
    out[2, 1] = cy - hl * s - hw * c
    out[3, 0] = cx - hl * c - hw * s
    out[3, 1] = cy - hl * s + hw * c


@_jit
def _orient(ax, ay, bx, by, cx, cy):
    v = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    if v > 0.0:
        return 1
    if v < 0.0:
        return -1
    return 0


@_jit
def _on_segment(ax, ay, bx, by, px, py):
    # p collinear with a-b assumed; is it within the bounding box?
    return (min(ax, bx) <= px <= max(ax, bx)) and (min(ay, by) <= py <= max(ay, by))


@_jit
def segments_intersect(ax, ay, bx, by, cx, cy, dx, dy):
    o1 = _orient(ax, ay, bx, by, cx, cy)
    o2 = _orient(ax, ay, bx, by, dx, dy)
    o3 = _orient(cx, cy, dx, dy, ax, ay)
    o4 = _orient(cx, cy, dx, dy, bx, by)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and _on_segment(ax, ay, bx, by, cx, cy):
        return True
    if o2 == 0 and _on_segment(ax, ay, bx, by, dx, dy):
        return True
    if o3 == 0 and _on_segment(cx, cy, dx, dy, ax, ay):
        return True
    if o4 == 0 and _on_segment(cx, cy, dx, dy, bx, by):
        return True
    return False


@_jit
def _point_seg_dist(px, py, ax, ay, bx, by):
    ux = bx - ax
    uy = by - ay
    l2 = ux * ux + uy * uy
    if l2 <= 0.0:
        dx0 = px - ax
        dy0 = py - ay
        return math.sqrt(dx0 * dx0 + dy0 * dy0)
    t = ((px - ax) * ux + (py - ay) * uy) / l2
    if t < 0.0:
        t = 0.0
    elif t > 1.0:
        t = 1.0
    dx0 = px - (ax + t * ux)
    dy0 = py - (ay + t * uy)
    return math.sqrt(dx0 * dx0 + dy0 * dy0)


@_jit
def _point_in_quad(px, py, q):
    # convex quad, either winding: point is inside iff all cross products
    # with the edges share a sign (zero = on edge counts as inside).
    pos = False
    neg = False
    for i in range(4):
        j = (i + 1) % 4
        cr = (q[j, 0] - q[i, 0]) * (py - q[i, 1]) - (q[j, 1] - q[i, 1]) * (px - q[i, 0])
        if cr > 0.0:
            pos = True
        elif cr < 0.0:
            neg = True
    return not (pos and neg)


@_jit
def rect_rect_distance(a, b):
    """Euclidean distance between two oriented rectangles ((4,2) corners).

    0 exactly when they touch or overlap; otherwise the minimum over
    point-to-edge pairs, which is exact for convex polygons.
    """
    for i in range(4):
        i2 = (i + 1) % 4
        for j in range(4):
            j2 = (j + 1) % 4
            if segments_intersect(a[i, 0], a[i, 1], a[i2, 0], a[i2, 1],
                                  b[j, 0], b[j, 1], b[j2, 0], b[j2, 1]):
                return 0.0
    if _point_in_quad(a[0, 0], a[0, 1], b) or _point_in_quad(b[0, 0], b[0, 1], a):
        return 0.0
    best = np.inf
    for i in range(4):
        i2 = (i + 1) % 4
        for j in range(4):
            j2 = (j + 1) % 4
            d1 = _point_seg_dist(a[i, 0], a[i, 1], b[j, 0], b[j, 1], b[j2, 0], b[j2, 1])
            if d1 < best:
                best = d1
            d2 = _point_seg_dist(b[j, 0], b[j, 1], a[i, 0], a[i, 1], a[i2, 0], a[i2, 1])
            if d2 < best:
                best = d2
    return best


@_jit
def point_in_ring(px, py, ring):
    """Crossing-number test against a simple polygon ring ((R,2), open).

    Points exactly on the boundary get an arbitrary answer; callers that care
    must test :func:`point_on_ring` first.
    """
    inside = False
    n = ring.shape[0]
    j = n - 1
    for i in range(n):
        yi = ring[i, 1]
        yj = ring[j, 1]
        if (yi > py) != (yj > py):
            xint = ring[j, 0] + (py - yj) * (ring[i, 0] - ring[j, 0]) / (yi - yj)
            if px < xint:
                inside = not inside
        j = i
    return inside


@_jit
def point_on_ring(px, py, ring):
    n = ring.shape[0]
    for i in range(n):
        j = (i + 1) % n
        if _orient(ring[i, 0], ring[i, 1], ring[j, 0], ring[j, 1], px, py) == 0 \
                and _on_segment(ring[i, 0], ring[i, 1], ring[j, 0], ring[j, 1], px, py):
            return True
    return False


@_jit
def _segments_cross_properly(ax, ay, bx, by, cx, cy, dx, dy):
    o1 = _orient(ax, ay, bx, by, cx, cy)
    o2 = _orient(ax, ay, bx, by, dx, dy)
    o3 = _orient(cx, cy, dx, dy, ax, ay)
    o4 = _orient(cx, cy, dx, dy, bx, by)
    return o1 != 0 and o2 != 0 and o3 != 0 and o4 != 0 and o1 != o2 and o3 != o4


@_jit
def _point_in_quad_strict(px, py, q):
    pos = False
    neg = False
    for i in range(4):
        j = (i + 1) % 4
        cr = (q[j, 0] - q[i, 0]) * (py - q[i, 1]) - (q[j, 1] - q[i, 1]) * (px - q[i, 0])
        if cr > 0.0:
            pos = True
        elif cr < 0.0:
            neg = True
        else:
            return False        # on an edge: not strictly inside
    return not (pos and neg)


@_jit
def rect_inside_ring(c, ring):
    """True iff no part of the rectangle lies strictly outside the ring.

    Touching the boundary counts as inside (the region is closed).  Exact for
    simple hole-free rings: corners inside-or-on, no proper edge crossing, and
    no ring vertex strictly interior to the rectangle.
    """
    for k in range(4):
        px = c[k, 0]
        py = c[k, 1]
        if not point_on_ring(px, py, ring) and not point_in_ring(px, py, ring):
            return False
    n = ring.shape[0]
    for k in range(4):
        k2 = (k + 1) % 4
        for i in range(n):
            i2 = (i + 1) % n
            if _segments_cross_properly(c[k, 0], c[k, 1], c[k2, 0], c[k2, 1],
                                        ring[i, 0], ring[i, 1],
                                        ring[i2, 0], ring[i2, 1]):
                return False
    for i in range(n):
        if _point_in_quad_strict(ring[i, 0], ring[i, 1], c):
            return False
    return True


@_jit
def rect_inside_rect(c, gx, gy, gux, guy, ghl, ghw):
    """True iff all corners of ``c`` fall inside the oriented goal rectangle."""
    for k in range(4):
        rx = c[k, 0] - gx
        ry = c[k, 1] - gy
        u = rx * gux + ry * guy
        w = -rx * guy + ry * gux
        if u < -ghl or u > ghl or w < -ghw or w > ghw:
            return False
    return True


# ---------------------------------------------------------------------------
# composite per-period kernels


@_jit
def perceived_check(ix, iy, ihead, rmul, rdiv, vl, vw, tidx,
                    mov_q, static_q, road, gcorners, gx, gy, gux, guy, ghl, ghw):
    """Controller-frame metrics of one quantized pose at sensing index ``tidx``.

    Returns (min obstacle distance, distance to goal rect, offroad, in goal).
    """
    c = np.empty((4, 2))
    rect_corners(i2d(ix, rmul, rdiv), i2d(iy, rmul, rdiv), vl, vw,
                 i2d(ihead, rmul, rdiv), c)
    mind = np.inf
    for m in range(mov_q.shape[1]):
        d0 = rect_rect_distance(c, mov_q[tidx, m])
        if d0 < mind:
            mind = d0
    for s in range(static_q.shape[0]):
        d0 = rect_rect_distance(c, static_q[s])
        if d0 < mind:
            mind = d0
    offroad = not rect_inside_ring(c, road)
    goal_in = rect_inside_rect(c, gx, gy, gux, guy, ghl, ghw)
    gdist = rect_rect_distance(c, gcorners)
    return mind, gdist, offroad, goal_in


@_jit
def step_monitor(x, y, v, acc, head, jerk, turn, c1, substeps, ms, fine_base,
                 mov_fine, static_c, road, vl, vw, td):
    """Integrate the plant over one sensing period with ground-truth checks.

    Samples the trajectory ``ms`` times (every ``substeps // ms`` sub-steps),
    checking collision (< td) and offroad against the true obstacle corner
    table ``mov_fine`` indexed from ``fine_base``.  Returns the final plant
    state, the two violation flags and the minimum true obstacle distance
    seen over the period's samples.
    """
    unit = c1 / substeps
    stride = substeps // ms
    collided = False
    offroad = False
    mind = np.inf
    c = np.empty((4, 2))
    for i in range(1, substeps + 1):
        acc += jerk * unit
        head += turn * unit
        v += acc * unit
        x += v * math.cos(head) * unit
        y += v * math.sin(head) * unit
        if i % stride == 0:
            j = fine_base + i // stride
            rect_corners(x, y, vl, vw, head, c)
            for m in range(mov_fine.shape[1]):
                d0 = rect_rect_distance(c, mov_fine[j, m])
                if d0 < mind:
                    mind = d0
                if d0 < td:
                    collided = True
            for s in range(static_c.shape[0]):
                d0 = rect_rect_distance(c, static_c[s])
                if d0 < mind:
                    mind = d0
                if d0 < td:
                    collided = True
            if not rect_inside_ring(c, road):
                offroad = True
    return x, y, v, acc, head, collided, offroad, mind


@_pjit
def expand_layer(states, actions, sense_base, n_sub, c1, steps,
                 rmul, rdiv, fmul, fdiv, max_sig,
                 mov_q, static_q, road, vl, vw, td,
                 gcorners, gx, gy, gux, guy, ghl, ghw,
                 succ, ecol, eoff, egoal, sdist, sgdist, ovf):
    """Batch successor computation over one decision layer.

    For every (state, action) pair: run ``n_sub`` sensing-period updates of
    the controller's integer state, checking controller-frame safety (quantized
    vehicle vs quantized obstacle corners at each sensing boundary, offroad
    against the road ring) and goal containment at the decision boundary.

    Outputs (pre-allocated by the caller):
      succ[i,a,:]  successor integer state
      ecol[i,a]    obstacle closer than td at some sensing boundary
      eoff[i,a]    vehicle partly off the road at some sensing boundary
      egoal[i,a]   perceived goal containment at the decision boundary
      sdist[i,a]   min obstacle distance at the decision boundary
      sgdist[i,a]  distance to the goal rectangle at the decision boundary
      ovf[i,a]     significand overflow occurred (edge is invalid)
    """
    n = states.shape[0]
    na = actions.shape[0]
    unit = c1 / steps
    for flat in prange(n * na):
        i = flat // na
        a = flat % na
        ix = states[i, 0]
        iy = states[i, 1]
        iv = states[i, 2]
        iacc = states[i, 3]
        ihead = states[i, 4]
        jerk = i2d(actions[a, 0], rmul, rdiv)
        turn = i2d(actions[a, 1], rmul, rdiv)
        c = np.empty((4, 2))
        col = False
        off = False
        bad = False
        mind_final = np.inf
        gdist = np.inf
        gin = False
        for j in range(1, n_sub + 1):
            x = i2d(ix, rmul, rdiv)
            y = i2d(iy, rmul, rdiv)
            v = i2d(iv, rmul, rdiv)
            acc = i2d(iacc, rmul, rdiv)
            head = i2d(ihead, rmul, rdiv)
            for _ in range(steps):
                acc += jerk * unit
                head += turn * unit
                v += acc * unit
                x += v * math.cos(head) * unit
                y += v * math.sin(head) * unit
            n0, ok0 = _d2i_flagged(x, fmul, fdiv, max_sig)
            n1, ok1 = _d2i_flagged(y, fmul, fdiv, max_sig)
            n2, ok2 = _d2i_flagged(v, fmul, fdiv, max_sig)
            n3, ok3 = _d2i_flagged(acc, fmul, fdiv, max_sig)
            n4, ok4 = _d2i_flagged(head, fmul, fdiv, max_sig)
            if not (ok0 and ok1 and ok2 and ok3 and ok4):
                bad = True
                break
            ix, iy, iv, iacc, ihead = n0, n1, n2, n3, n4
            tidx = sense_base + j
            rect_corners(i2d(ix, rmul, rdiv), i2d(iy, rmul, rdiv), vl, vw,
                         i2d(ihead, rmul, rdiv), c)
            mind = np.inf
            for m in range(mov_q.shape[1]):
                d0 = rect_rect_distance(c, mov_q[tidx, m])
                if d0 < mind:
                    mind = d0
            for s in range(static_q.shape[0]):
                d0 = rect_rect_distance(c, static_q[s])
                if d0 < mind:
                    mind = d0
            if mind < td:
                col = True
            if not rect_inside_ring(c, road):
                off = True
            if j == n_sub:
                mind_final = mind
                gin = rect_inside_rect(c, gx, gy, gux, guy, ghl, ghw)
                gdist = rect_rect_distance(c, gcorners)
        succ[i, a, 0] = ix
        succ[i, a, 1] = iy
        succ[i, a, 2] = iv
        succ[i, a, 3] = iacc
        succ[i, a, 4] = ihead
        ovf[i, a] = bad
        ecol[i, a] = col
        eoff[i, a] = off
        egoal[i, a] = gin
        sdist[i, a] = mind_final
        sgdist[i, a] = gdist
