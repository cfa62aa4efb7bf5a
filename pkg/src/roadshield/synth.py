"""Exhaustive pre-analysis, shield synthesis and bounded verification.

The synthesizable world is the controller's: integer perceived states evolving
by the dead-reckoning sensor update, checked against quantized obstacle
corners at sensing boundaries.  The continuous plant is deliberately excluded
here (it is monitored statistically by :mod:`roadshield.smc`, not searched),
which is what makes the pre-analysis able to expose quantization and period
bugs in the first place: a shield that looks sound in this integer world can
still fail against the ground truth when the scale or the sensing period is
too coarse.

The bounded horizon makes the game finite and acyclic in time, so everything
reduces to a layered graph: layer k holds every perceived state reachable at
decision index k through violation-free edges.  Safe-path existence, goal
reachability, the maximally permissive shield and strategy-restricted
verification are all sweeps over this graph.  Obstacles follow fixed
trajectories, so each (state, action) pair has exactly one successor and the
game-theoretic fixed point degenerates to backward induction over layers.

All iteration orders are fixed (lexicographically sorted states, ascending
action indices), so every result is reproducible bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .dynamics import ActionValue
from .errors import BudgetExceededError, EmptyShieldError
from .game import GameState, StateKey, initial_state, step
from .scenario import Scenario, compile_scenario
from .strategies import PermissiveStrategy, Strategy

__all__ = ["Verdict", "Property", "parse_property", "DEFAULT_BUDGET",
           "check_safe_existence", "check_reachable_existence",
           "synthesize_shield", "verify_under", "build_graph"]

DEFAULT_BUDGET = 5_000_000

_CHUNK = 131_072


@dataclass(frozen=True)
class Verdict:
    holds: bool
    trace_states: tuple[GameState, ...] = ()
    trace_actions: tuple[ActionValue, ...] = ()
    states_explored: int = 0
    description: str = ""

    def replay(self, sc: Scenario) -> tuple[GameState, ...]:
        """Re-execute the trace actions through the game transition."""
        g = initial_state(sc)
        out = [g]
        for act in self.trace_actions:
            if g.terminal or g.decision_index >= sc.n_decisions:
                break
            g = step(g, act, sc)
            out.append(g)
        return tuple(out)


@dataclass(frozen=True)
class Property:
    """Temporal property over named predicates of the perceived frame."""

    kind: str        # always | eventually_all | exists_eventually | exists_always
    predicate: str   # safe | goal | collide | offroad, optionally '!'-negated

    KINDS = ("always", "eventually_all", "exists_eventually", "exists_always")
    PREDICATES = ("safe", "goal", "collide", "offroad")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown property kind '{self.kind}'")
        if self.predicate.lstrip("!") not in self.PREDICATES:
            raise ValueError(f"unknown predicate '{self.predicate}'")


def parse_property(text: str) -> Property:
    """Parse 'kind:predicate', e.g. 'always:safe' or 'eventually_all:goal'."""
    try:
        kind, pred = text.split(":")
    except ValueError:
        raise ValueError(f"property must look like 'kind:predicate', got {text!r}")
    return Property(kind=kind.strip(), predicate=pred.strip())


# ---------------------------------------------------------------------------
# layered graph over perceived states


@dataclass(eq=False)
class LayerGraph:
    sc: Scenario
    layers: list[np.ndarray]          # (N_k, 5) int64, lexicographically sorted
    ecol: list[np.ndarray]            # (N_k, A) collision at some sensing boundary
    eoff: list[np.ndarray]            # (N_k, A) offroad at some sensing boundary
    esafe: list[np.ndarray]           # (N_k, A) neither, and no overflow
    egoal: list[np.ndarray]           # (N_k, A) goal containment at decision boundary
    succ: list[np.ndarray]            # (N_k, A) index into layer k+1, -1 if none
    sdist: list[np.ndarray]           # (N_k, A) obstacle distance at decision boundary
    sgdist: list[np.ndarray]          # (N_k, A) goal distance at decision boundary
    init_safe: bool = True
    init_goal: bool = False
    init_dist: float = math.inf
    init_gdist: float = math.inf
    init_offroad: bool = False
    states_explored: int = 0

    @property
    def horizon(self) -> int:
        return len(self.layers) - 1

    @property
    def n_actions(self) -> int:
        return compile_scenario(self.sc).actions.shape[0]

    def key_of(self, k: int, idx: int) -> StateKey:
        s = self.layers[k][idx]
        return StateKey(int(s[0]), int(s[1]), int(s[2]), int(s[3]), int(s[4]), k)


_GRAPH_CACHE: dict[tuple[Scenario, int], LayerGraph] = {}


def clear_graph_cache():
    _GRAPH_CACHE.clear()


def _empty_edges(graph: LayerGraph, n: int, na: int):
    graph.ecol.append(np.empty((n, na), dtype=np.bool_))
    graph.eoff.append(np.empty((n, na), dtype=np.bool_))
    graph.esafe.append(np.empty((n, na), dtype=np.bool_))
    graph.egoal.append(np.empty((n, na), dtype=np.bool_))
    graph.succ.append(np.empty((n, na), dtype=np.int64))
    graph.sdist.append(np.empty((n, na), dtype=np.float64))
    graph.sgdist.append(np.empty((n, na), dtype=np.float64))


def build_graph(sc: Scenario, budget: int = DEFAULT_BUDGET) -> LayerGraph:
    """Forward-expand the perceived game up to the horizon (memoized)."""
    cache_key = (sc, budget)
    hit = _GRAPH_CACHE.get(cache_key)
    if hit is not None:
        return hit

    comp = compile_scenario(sc)
    rmul, rdiv, fmul, fdiv, max_sig = comp.scale_args
    timing = sc.timing
    n_sub = timing.c2 // timing.c1
    c1 = float(timing.c1)
    steps = sc.integration.sense_steps
    acts = comp.actions
    na = acts.shape[0]
    horizon = sc.n_decisions

    init = comp.init_perceived
    mind0, gdist0, off0, goal0 = K.perceived_check(
        int(init[0]), int(init[1]), int(init[4]), rmul, rdiv,
        sc.vehicle.length, sc.vehicle.width, 0,
        comp.mov_q, comp.static_q, comp.ring, comp.goal_corners,
        comp.gx, comp.gy, comp.gux, comp.guy, comp.ghl, comp.ghw)
    init_safe = (mind0 >= sc.td) and not off0

    graph = LayerGraph(sc=sc, layers=[init[None, :].copy()],
                       ecol=[], eoff=[], esafe=[], egoal=[], succ=[],
                       sdist=[], sgdist=[],
                       init_safe=bool(init_safe), init_goal=bool(goal0),
                       init_dist=float(mind0), init_gdist=float(gdist0),
                       init_offroad=bool(off0), states_explored=1)

    if not init_safe or goal0:
        # the run ends at t=0: no edges leave the initial node
        graph.layers.extend(np.empty((0, 5), dtype=np.int64) for _ in range(horizon))
        _empty_edges(graph, 1, na)
        graph.esafe[0][:] = False
        graph.ecol[0][:] = False
        graph.eoff[0][:] = False
        graph.egoal[0][:] = False
        graph.succ[0][:] = -1
        graph.sdist[0][:] = math.inf
        graph.sgdist[0][:] = math.inf
        for _ in range(1, horizon):
            _empty_edges(graph, 0, na)
        _GRAPH_CACHE[cache_key] = graph
        _trim_cache()
        return graph

    for k in range(horizon):
        states = graph.layers[k]
        n = states.shape[0]
        succ_states = np.empty((n, na, 5), dtype=np.int64)
        ecol = np.empty((n, na), dtype=np.bool_)
        eoff = np.empty((n, na), dtype=np.bool_)
        egoal = np.empty((n, na), dtype=np.bool_)
        sdist = np.empty((n, na), dtype=np.float64)
        sgdist = np.empty((n, na), dtype=np.float64)
        ovf = np.empty((n, na), dtype=np.bool_)
        for lo in range(0, n, _CHUNK):
            hi = min(lo + _CHUNK, n)
            K.expand_layer(states[lo:hi], acts, k * n_sub, n_sub, c1, steps,
                           rmul, rdiv, fmul, fdiv, max_sig,
                           comp.mov_q, comp.static_q, comp.ring,
                           sc.vehicle.length, sc.vehicle.width, sc.td,
                           comp.goal_corners, comp.gx, comp.gy, comp.gux,
                           comp.guy, comp.ghl, comp.ghw,
                           succ_states[lo:hi], ecol[lo:hi], eoff[lo:hi],
                           egoal[lo:hi], sdist[lo:hi], sgdist[lo:hi], ovf[lo:hi])
        esafe = ~(ecol | eoff | ovf)

        cont = esafe & ~egoal
        flat = succ_states.reshape(-1, 5)
        mask = cont.reshape(-1)
        succ_idx = np.full(n * na, -1, dtype=np.int64)
        if mask.any():
            nxt, inverse = np.unique(flat[mask], axis=0, return_inverse=True)
            succ_idx[mask] = inverse.reshape(-1)
            graph.states_explored += int(nxt.shape[0])
            if graph.states_explored > budget:
                raise BudgetExceededError(
                    f"exploration exceeded the budget of {budget} states at "
                    f"decision layer {k + 1}")
            graph.layers.append(nxt)
        else:
            graph.layers.append(np.empty((0, 5), dtype=np.int64))
        graph.ecol.append(ecol)
        graph.eoff.append(eoff)
        graph.esafe.append(esafe)
        graph.egoal.append(egoal)
        graph.succ.append(succ_idx.reshape(n, na))
        graph.sdist.append(sdist)
        graph.sgdist.append(sgdist)
        if graph.layers[k + 1].shape[0] == 0 and k + 1 < horizon:
            for _ in range(k + 1, horizon):
                graph.layers.append(np.empty((0, 5), dtype=np.int64))
                _empty_edges(graph, 0, na)
            break

    _GRAPH_CACHE[cache_key] = graph
    _trim_cache()
    return graph


def _trim_cache(limit: int = 2):
    while len(_GRAPH_CACHE) > limit:
        _GRAPH_CACHE.pop(next(iter(_GRAPH_CACHE)))


def _gather(nxt_vals: np.ndarray, succ: np.ndarray, fill: bool = False) -> np.ndarray:
    """nxt_vals[succ] with -1 mapped to ``fill``."""
    if nxt_vals.shape[0] == 0:
        return np.full(succ.shape, fill, dtype=np.bool_)
    out = nxt_vals[np.clip(succ, 0, None)]
    out[succ < 0] = fill
    return out


def _survival(graph: LayerGraph) -> list[np.ndarray]:
    """surv[k][n]: a violation-free continuation to goal or horizon exists."""
    horizon = graph.horizon
    surv: list[np.ndarray] = [np.empty(0, dtype=np.bool_)] * (horizon + 1)
    surv[horizon] = np.ones(graph.layers[horizon].shape[0], dtype=np.bool_)
    for k in range(horizon - 1, -1, -1):
        edge_ok = graph.esafe[k] & (graph.egoal[k] | _gather(surv[k + 1], graph.succ[k]))
        surv[k] = edge_ok.any(axis=1)
    return surv


def _surviving_edges(graph: LayerGraph, surv) -> list[np.ndarray]:
    return [graph.esafe[k] & (graph.egoal[k] | _gather(surv[k + 1], graph.succ[k]))
            for k in range(graph.horizon)]


def _goal_reach(graph: LayerGraph) -> list[np.ndarray]:
    """greach[k][n]: a violation-free run from n ends inside the goal region."""
    horizon = graph.horizon
    greach: list[np.ndarray] = [np.empty(0, dtype=np.bool_)] * (horizon + 1)
    greach[horizon] = np.zeros(graph.layers[horizon].shape[0], dtype=np.bool_)
    for k in range(horizon - 1, -1, -1):
        edge_ok = graph.esafe[k] & (graph.egoal[k] | _gather(greach[k + 1], graph.succ[k]))
        greach[k] = edge_ok.any(axis=1)
    return greach


def _walk_witness(graph: LayerGraph, edge_ok: list[np.ndarray]) -> list[int]:
    """Deterministic lowest-action walk through edges marked ok."""
    actions: list[int] = []
    node = 0
    for k in range(graph.horizon):
        choices = np.nonzero(edge_ok[k][node])[0]
        if choices.size == 0:
            break
        a = int(choices[0])
        actions.append(a)
        if graph.egoal[k][node, a] and graph.esafe[k][node, a]:
            break
        nxt = int(graph.succ[k][node, a])
        if nxt < 0:
            break
        node = nxt
    return actions


def _verdict_with_trace(sc: Scenario, holds: bool, action_idx: list[int],
                        explored: int, description: str) -> Verdict:
    acts_all = compile_scenario(sc).actions
    actions = tuple(ActionValue(int(acts_all[a, 0]), int(acts_all[a, 1]))
                    for a in action_idx)
    g = initial_state(sc)
    states = [g]
    for act in actions:
        if g.terminal or g.decision_index >= sc.n_decisions:
            break
        g = step(g, act, sc)
        states.append(g)
    return Verdict(holds=holds, trace_states=tuple(states), trace_actions=actions,
                   states_explored=explored, description=description)


# ---------------------------------------------------------------------------
# pre-analysis queries


def check_safe_existence(sc: Scenario, budget: int = DEFAULT_BUDGET) -> Verdict:
    """Does some run stay free of perceived collision/offroad up to the horizon?"""
    graph = build_graph(sc, budget)
    if not graph.init_safe:
        return Verdict(holds=False, states_explored=graph.states_explored,
                       description="initial state already violates safety")
    if graph.init_goal:
        return Verdict(holds=True, states_explored=graph.states_explored,
                       description="initial state is inside the goal region")
    surv = _survival(graph)
    if not bool(surv[0][0]):
        return Verdict(holds=False, states_explored=graph.states_explored,
                       description="no safe path exists within the horizon")
    witness = _walk_witness(graph, _surviving_edges(graph, surv))
    return _verdict_with_trace(sc, True, witness, graph.states_explored,
                               "safe path found")


def check_reachable_existence(sc: Scenario, budget: int = DEFAULT_BUDGET) -> Verdict:
    """Does some run stay safe throughout and end inside the goal region?"""
    graph = build_graph(sc, budget)
    if not graph.init_safe:
        return Verdict(holds=False, states_explored=graph.states_explored,
                       description="initial state already violates safety")
    if graph.init_goal:
        return Verdict(holds=True, states_explored=graph.states_explored,
                       description="initial state is inside the goal region")
    greach = _goal_reach(graph)
    if not bool(greach[0][0]):
        return Verdict(holds=False, states_explored=graph.states_explored,
                       description="no safe and goal-reaching path exists")
    edges = [graph.esafe[k] & (graph.egoal[k] | _gather(greach[k + 1], graph.succ[k]))
             for k in range(graph.horizon)]
    witness = _walk_witness(graph, edges)
    return _verdict_with_trace(sc, True, witness, graph.states_explored,
                               "safe goal-reaching path found")


# ---------------------------------------------------------------------------
# shield synthesis


def synthesize_shield(sc: Scenario, budget: int = DEFAULT_BUDGET) -> PermissiveStrategy:
    """Maximally permissive safety shield via backward induction.

    A (state, action) pair survives iff its edge is violation-free and its
    unique successor is itself surviving (or the edge ends in the goal or at
    the horizon).  The returned table is restricted to states reachable under
    the shield, so rollout lookups never leave its domain.
    """
    graph = build_graph(sc, budget)
    if not graph.init_safe:
        raise EmptyShieldError("the initial state already violates safety")
    na = graph.n_actions
    if graph.init_goal:
        # the run is over before any decision is taken
        return PermissiveStrategy(mact=na, table={graph.key_of(0, 0): tuple(range(na))})
    surv = _survival(graph)
    if not bool(surv[0][0]):
        raise EmptyShieldError("no action at the initial state can stay safe "
                               "up to the horizon")
    edges = _surviving_edges(graph, surv)

    table: dict[StateKey, tuple[int, ...]] = {}
    reach = np.zeros(graph.layers[0].shape[0], dtype=np.bool_)
    reach[0] = True
    for k in range(graph.horizon):
        idxs = np.nonzero(reach)[0]
        if idxs.size == 0:
            break
        nxt_reach = np.zeros(graph.layers[k + 1].shape[0], dtype=np.bool_)
        for n in idxs:
            allowed = np.nonzero(edges[k][n])[0]
            table[graph.key_of(k, int(n))] = tuple(int(a) for a in allowed)
            for a in allowed:
                s = int(graph.succ[k][n, a])
                if s >= 0:
                    nxt_reach[s] = True
        reach = nxt_reach
    return PermissiveStrategy(mact=na, table=table)


# ---------------------------------------------------------------------------
# bounded verification under a strategy


def _edge_pred(graph: LayerGraph, k: int, prop_pred: str) -> np.ndarray:
    neg = prop_pred.startswith("!")
    name = prop_pred.lstrip("!")
    if name == "safe":
        val = graph.esafe[k]
    elif name == "goal":
        val = graph.esafe[k] & graph.egoal[k]
    elif name == "collide":
        val = graph.ecol[k]
    else:  # offroad
        val = graph.eoff[k]
    return ~val if neg else val


def _init_pred(graph: LayerGraph, prop_pred: str) -> bool:
    neg = prop_pred.startswith("!")
    name = prop_pred.lstrip("!")
    if name == "safe":
        val = graph.init_safe
    elif name == "goal":
        val = graph.init_goal
    elif name == "collide":
        val = graph.init_dist < graph.sc.td
    else:  # offroad
        val = graph.init_offroad
    return (not val) if neg else val


def _permitted_masks(graph: LayerGraph, strat: Strategy):
    """Strategy-restricted reachability and permitted-action masks.

    Raises StrategyDomainError when a strategy-reachable node has no entry.
    """
    horizon = graph.horizon
    na = graph.n_actions
    reached = [np.zeros(graph.layers[k].shape[0], dtype=np.bool_)
               for k in range(horizon + 1)]
    masks = [np.zeros((graph.layers[k].shape[0], na), dtype=np.bool_)
             for k in range(horizon)]
    reached[0][0] = True
    for k in range(horizon):
        for n in np.nonzero(reached[k])[0]:
            key = graph.key_of(k, int(n))
            for a in strat.permitted(key):
                masks[k][n, a] = True
                if graph.esafe[k][n, a] and not graph.egoal[k][n, a]:
                    s = int(graph.succ[k][n, a])
                    if s >= 0:
                        reached[k + 1][s] = True
    return reached, masks


def verify_under(sc: Scenario, strat: Strategy, prop: Property,
                 budget: int = DEFAULT_BUDGET) -> Verdict:
    """Exhaustively check ``prop`` over the strategy-restricted game."""
    graph = build_graph(sc, budget)
    explored = graph.states_explored
    init_p = _init_pred(graph, prop.predicate)

    if graph.init_goal or not graph.init_safe:
        # the single run ends at t=0 with no decision taken
        return Verdict(holds=init_p, states_explored=explored,
                       description="trivial run: the game ends at t=0")

    reached, masks = _permitted_masks(graph, strat)
    horizon = graph.horizon

    if prop.kind == "always":
        if not init_p:
            return Verdict(holds=False, states_explored=explored,
                           description="initial state violates the predicate")
        for k in range(horizon):
            bad = reached[k][:, None] & masks[k] & ~_edge_pred(graph, k, prop.predicate)
            if bad.any():
                rows, cols = np.nonzero(bad)
                n, a = int(rows[0]), int(cols[0])
                actions = _path_to(graph, masks, k, n) + [a]
                return _verdict_with_trace(sc, False, actions, explored,
                                           f"counterexample to always-{prop.predicate}")
        return Verdict(holds=True, states_explored=explored,
                       description=f"always {prop.predicate} holds")

    if prop.kind == "exists_eventually":
        if init_p:
            return Verdict(holds=True, states_explored=explored,
                           description="initial state satisfies the predicate")
        for k in range(horizon):
            hit = reached[k][:, None] & masks[k] & _edge_pred(graph, k, prop.predicate)
            if hit.any():
                rows, cols = np.nonzero(hit)
                n, a = int(rows[0]), int(cols[0])
                actions = _path_to(graph, masks, k, n) + [a]
                return _verdict_with_trace(sc, True, actions, explored,
                                           f"witness for eventually-{prop.predicate}")
        return Verdict(holds=False, states_explored=explored,
                       description=f"no permitted run reaches {prop.predicate}")

    if prop.kind == "eventually_all":
        # ok[k][n]: every permitted maximal run from node n hits the predicate.
        # Runs ending at the horizon without hitting it fail, as do runs that
        # get stuck on an empty permitted set.
        ok = [np.zeros(graph.layers[k].shape[0], dtype=np.bool_)
              for k in range(horizon + 1)]
        for k in range(horizon - 1, -1, -1):
            pred = _edge_pred(graph, k, prop.predicate)
            cont = graph.esafe[k] & ~graph.egoal[k]
            follow = _gather(ok[k + 1], graph.succ[k])
            edge_ok = pred | (cont & follow)
            has_action = masks[k].any(axis=1)
            ok[k] = has_action & np.where(masks[k], edge_ok, True).all(axis=1)
        holds = init_p or bool(ok[0][0])
        if holds:
            return Verdict(holds=True, states_explored=explored,
                           description=f"all permitted runs reach {prop.predicate}")
        actions = _walk_failing(graph, masks, ok, prop)
        return _verdict_with_trace(sc, False, actions, explored,
                                   f"counterexample run avoiding {prop.predicate}")

    # exists_always: some permitted maximal run satisfies pred on every edge
    ok = [np.ones(graph.layers[k].shape[0], dtype=np.bool_)
          for k in range(horizon + 1)]
    for k in range(horizon - 1, -1, -1):
        pred = _edge_pred(graph, k, prop.predicate)
        cont = graph.esafe[k] & ~graph.egoal[k]
        edge_ok = pred & np.where(cont, _gather(ok[k + 1], graph.succ[k]), True)
        ok[k] = (masks[k] & edge_ok).any(axis=1)
    holds = init_p and bool(ok[0][0])
    if not holds:
        return Verdict(holds=False, states_explored=explored,
                       description=f"no permitted run keeps {prop.predicate} throughout")
    edges = []
    for k in range(horizon):
        pred = _edge_pred(graph, k, prop.predicate)
        cont = graph.esafe[k] & ~graph.egoal[k]
        edges.append(masks[k] & pred &
                     np.where(cont, _gather(ok[k + 1], graph.succ[k]), True))
    witness = _walk_witness(graph, edges)
    return _verdict_with_trace(sc, True, witness, explored,
                               f"witness run keeping {prop.predicate}")


def _path_to(graph: LayerGraph, masks, k_target: int, n_target: int) -> list[int]:
    """Lowest-index permitted action path from the root to a node at layer k."""
    if k_target == 0:
        return []
    path: list[int] = []
    dead: set[tuple[int, int]] = set()

    def dfs(k: int, n: int) -> bool:
        if k == k_target:
            return n == n_target
        if (k, n) in dead:
            return False
        for a in np.nonzero(masks[k][n])[0]:
            if graph.esafe[k][n, a] and not graph.egoal[k][n, a]:
                s = int(graph.succ[k][n, a])
                if s >= 0:
                    path.append(int(a))
                    if dfs(k + 1, s):
                        return True
                    path.pop()
        dead.add((k, n))
        return False

    dfs(0, 0)
    return path


def _walk_failing(graph: LayerGraph, masks, ok, prop: Property) -> list[int]:
    """Walk one permitted run demonstrating failure of eventually_all(pred)."""
    actions: list[int] = []
    node = 0
    for k in range(graph.horizon):
        row_mask = masks[k][node]
        if not row_mask.any():
            break
        pred = _edge_pred(graph, k, prop.predicate)[node]
        cont = (graph.esafe[k] & ~graph.egoal[k])[node]
        follow = _gather(ok[k + 1], graph.succ[k])[node]
        # a failing branch either terminates without pred or continues into a
        # node from which some run avoids pred
        bad = row_mask & ~pred & (~cont | ~follow)
        choices = np.nonzero(bad)[0]
        if choices.size == 0:
            break
        a = int(choices[0])
        actions.append(a)
        if not cont[a]:
            break
        node = int(graph.succ[k][node, a])
    return actions
