"""Vehicle plant, dead-reckoned perception, and moving-obstacle motion.

Two integrations of the same ODE system (acc' = jerk, head' = turn, v' = acc,
x' = v cos head, y' = v sin head) live here:

* :func:`plant_step` is the ground truth - a fine-substep explicit Euler
  reference, never quantized.
* :func:`sense` is what the controller believes - the same Euler scheme at
  the coarse sensing granularity, entering from and re-quantizing to integer
  significands each period.  The update order inside a step (acc, head, v,
  then x and y with the fresh values) is part of the semantics.

The controller never reads the plant back: acc and head are dead-reckoned,
which is exactly why the perceived state can drift from the truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .errors import FixedPointRangeError, NumericError
from .fixedpoint import ScaleConfig
from .scenario import ObstacleTrajectory, OrientedRect, _obstacle_state

__all__ = ["PlantState", "PerceivedState", "ActionValue",
           "plant_step", "sense", "obstacle_pose"]


@dataclass(frozen=True)
class PlantState:
    """Ground-truth continuous state (metres, m/s, m/s^2, radians)."""

    x: float
    y: float
    v: float
    acc: float
    head: float
    t: float = 0.0


@dataclass(frozen=True)
class PerceivedState:
    """Controller-side integer state; updated only at sensing boundaries."""

    ix: int
    iy: int
    iv: int
    iacc: int
    ihead: int
    step_index: int = 0

    def as_array(self) -> np.ndarray:
        return np.array([self.ix, self.iy, self.iv, self.iacc, self.ihead],
                        dtype=np.int64)


@dataclass(frozen=True)
class ActionValue:
    """Significands of the two continuous action axes."""

    ijerk: int
    iturn: int


def plant_step(s: PlantState, act: ActionValue, scale: ScaleConfig,
               dt: float, substeps: int) -> PlantState:
    """Reference integration of the plant over ``dt`` with ``substeps`` Euler steps."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    rmul, rdiv = scale.to_real_mul_div
    jerk = K.i2d(act.ijerk, rmul, rdiv)
    turn = K.i2d(act.iturn, rmul, rdiv)
    xs = np.empty(substeps + 1)
    ys = np.empty(substeps + 1)
    heads = np.empty(substeps + 1)
    x, y, v, acc, head = K.plant_core(s.x, s.y, s.v, s.acc, s.head, jerk, turn,
                                      float(dt), substeps, xs, ys, heads)
    out = PlantState(x=x, y=y, v=v, acc=acc, head=head, t=s.t + dt)
    if not all(map(math.isfinite, (x, y, v, acc, head))):
        raise NumericError(f"plant integration diverged: {out}")
    return out


def sense(p: PerceivedState, act: ActionValue, scale: ScaleConfig,
          c1: float, granularity: float) -> PerceivedState:
    """One sensing-period numerical-integration update of the perceived state.

    ``granularity`` is G with 1/G a whole number of steps; the integration
    unit is ``c1 / steps``.
    """
    steps = round(1.0 / granularity)
    if steps < 1 or abs(steps - 1.0 / granularity) > 1e-9:
        raise ValueError("1/granularity must be a positive whole number of steps")
    rmul, rdiv = scale.to_real_mul_div
    fmul, fdiv = scale.to_fixed_mul_div
    try:
        ix, iy, iv, iacc, ihead = K.sense_core(
            p.ix, p.iy, p.iv, p.iacc, p.ihead, act.ijerk, act.iturn,
            float(c1), steps, rmul, rdiv, fmul, fdiv, scale.max_significand)
    except OverflowError as e:
        raise FixedPointRangeError(
            f"sense() overflowed the significand width at step {p.step_index}: {e}")
    return PerceivedState(ix=int(ix), iy=int(iy), iv=int(iv), iacc=int(iacc),
                          ihead=int(ihead), step_index=p.step_index + 1)


def obstacle_pose(tr: ObstacleTrajectory, t: float) -> OrientedRect:
    """Obstacle footprint at time t.

    Position integrates at constant velocity/heading from the most recent
    waypoint; velocity and heading switch discontinuously at waypoints and the
    last waypoint's motion extrapolates beyond the trajectory end.
    """
    x, y, _, h = _obstacle_state(tr, t)
    return OrientedRect(x=x, y=y, length=tr.length, width=tr.width, heading=h)
