"""Discrete-time composition of timer, controller, action and plant.

A decision step covers C2 time units = C2/C1 sensing sub-periods.  Within each
sub-period the plant integrates with reference substeps while the ground-truth
monitor samples the trajectory (default every C1/10) for collision/offroad,
and the perceived integer state advances by one ``sense`` update.  Goal is
checked on the plant at decision boundaries.  Terminal flags are monotone:
collision, offroad and goal all end the run.

Strategies and the learner condition only on what the controller can see, so
state keys are the perceived significands plus the decision index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from . import _kernels as K
from .dynamics import ActionValue, PerceivedState, PlantState
from .errors import ContractViolationError, FixedPointRangeError, NumericError
from .scenario import CompiledScenario, Scenario, compile_scenario

__all__ = ["GameState", "StateKey", "PeriodRecord", "initial_state",
           "enabled_actions", "step", "step_detailed", "encode", "horizon"]


class StateKey(NamedTuple):
    """Strategy domain: the perceived state and the decision index."""

    ix: int
    iy: int
    iv: int
    iacc: int
    ihead: int
    decision_index: int


@dataclass(frozen=True)
class GameState:
    plant: PlantState
    perceived: PerceivedState
    decision_index: int
    collided: bool = False
    offroad: bool = False
    reached_goal: bool = False
    min_true_distance: float = math.inf
    last_action: ActionValue | None = None

    @property
    def terminal(self) -> bool:
        return self.collided or self.offroad or self.reached_goal


@dataclass(frozen=True)
class PeriodRecord:
    """Ground-truth and perceived values at one sensing boundary."""

    sense_index: int
    t: float
    plant: PlantState
    perceived: PerceivedState
    action: ActionValue
    min_distance: float          # min true obstacle distance over the period


def horizon(sc: Scenario) -> int:
    return sc.n_decisions


def encode(g: GameState) -> StateKey:
    p = g.perceived
    return StateKey(p.ix, p.iy, p.iv, p.iacc, p.ihead, g.decision_index)


def enabled_actions(sc: Scenario) -> list[ActionValue]:
    """The action grid in its canonical row-major (jerk, then turn) order."""
    return [ActionValue(int(j), int(t)) for j, t in compile_scenario(sc).actions]


def _true_flags_at(comp: CompiledScenario, x, y, head, fine_idx):
    """(collided, offroad, min distance) of a plant pose at a fine-grid index."""
    sc = comp.sc
    c = np.empty((4, 2))
    K.rect_corners(x, y, sc.vehicle.length, sc.vehicle.width, head, c)
    mind = math.inf
    for m in range(comp.mov_fine.shape[1]):
        mind = min(mind, K.rect_rect_distance(c, comp.mov_fine[fine_idx, m]))
    for s in range(comp.static_true.shape[0]):
        mind = min(mind, K.rect_rect_distance(c, comp.static_true[s]))
    collided = mind < sc.td
    off = not K.rect_inside_ring(c, comp.ring)
    return collided, off, mind


def _plant_in_goal(comp: CompiledScenario, plant: PlantState) -> bool:
    sc = comp.sc
    c = np.empty((4, 2))
    K.rect_corners(plant.x, plant.y, sc.vehicle.length, sc.vehicle.width, plant.head, c)
    return bool(K.rect_inside_rect(c, comp.gx, comp.gy, comp.gux, comp.guy,
                                   comp.ghl, comp.ghw))


def initial_state(sc: Scenario) -> GameState:
    comp = compile_scenario(sc)
    v = sc.vehicle
    plant = PlantState(x=v.x, y=v.y, v=v.velocity, acc=0.0, head=v.heading, t=0.0)
    ip = comp.init_perceived
    perceived = PerceivedState(ix=int(ip[0]), iy=int(ip[1]), iv=int(ip[2]),
                               iacc=int(ip[3]), ihead=int(ip[4]), step_index=0)
    collided, off, mind = _true_flags_at(comp, plant.x, plant.y, plant.head, 0)
    g = GameState(plant=plant, perceived=perceived, decision_index=0,
                  collided=collided, offroad=off, min_true_distance=mind)
    if not g.collided and not g.offroad and _plant_in_goal(comp, plant):
        g = replace(g, reached_goal=True)
    return g


def step_detailed(g: GameState, act: ActionValue, sc: Scenario
                  ) -> tuple[GameState, list[PeriodRecord]]:
    """Advance one decision period, returning per-sensing-period records."""
    if g.terminal:
        raise ContractViolationError("cannot step a terminal game state")
    if g.decision_index >= sc.n_decisions:
        raise ContractViolationError("cannot step past the horizon MAXT")

    comp = compile_scenario(sc)
    timing = sc.timing
    ig = sc.integration
    c1 = float(timing.c1)
    n_sub = timing.c2 // timing.c1
    rmul, rdiv, fmul, fdiv, max_sig = comp.scale_args
    jerk = K.i2d(act.ijerk, rmul, rdiv)
    turn = K.i2d(act.iturn, rmul, rdiv)

    plant = g.plant
    perceived = g.perceived
    collided = False
    off = False
    records: list[PeriodRecord] = []
    for j in range(n_sub):
        sense_idx = perceived.step_index
        fine_base = sense_idx * ig.monitor_samples
        x, y, v, acc, head, hit, out, mind = K.step_monitor(
            plant.x, plant.y, plant.v, plant.acc, plant.head, jerk, turn,
            c1, ig.plant_substeps, ig.monitor_samples, fine_base,
            comp.mov_fine, comp.static_true, comp.ring,
            sc.vehicle.length, sc.vehicle.width, sc.td)
        if not all(map(math.isfinite, (x, y, v, acc, head))):
            raise NumericError("plant integration diverged during step()")
        plant = PlantState(x=x, y=y, v=v, acc=acc, head=head, t=plant.t + c1)
        try:
            si = K.sense_core(perceived.ix, perceived.iy, perceived.iv,
                              perceived.iacc, perceived.ihead,
                              act.ijerk, act.iturn, c1, ig.sense_steps,
                              rmul, rdiv, fmul, fdiv, max_sig)
        except OverflowError as e:
            raise FixedPointRangeError(
                f"sense() overflowed at sensing index {sense_idx}: {e}")
        perceived = PerceivedState(ix=int(si[0]), iy=int(si[1]), iv=int(si[2]),
                                   iacc=int(si[3]), ihead=int(si[4]),
                                   step_index=sense_idx + 1)
        collided = collided or bool(hit)
        off = off or bool(out)
        records.append(PeriodRecord(sense_index=sense_idx + 1, t=plant.t,
                                    plant=plant, perceived=perceived, action=act,
                                    min_distance=float(mind)))

    mind_all = min(g.min_true_distance, min(r.min_distance for r in records))
    nxt = GameState(plant=plant, perceived=perceived,
                    decision_index=g.decision_index + 1,
                    collided=g.collided or collided,
                    offroad=g.offroad or off,
                    reached_goal=g.reached_goal,
                    min_true_distance=mind_all,
                    last_action=act)
    if not nxt.collided and not nxt.offroad and _plant_in_goal(comp, plant):
        nxt = replace(nxt, reached_goal=True)
    return nxt, records


def step(g: GameState, act: ActionValue, sc: Scenario) -> GameState:
    """Pure decision-period transition (see :func:`step_detailed`)."""
    return step_detailed(g, act, sc)[0]
