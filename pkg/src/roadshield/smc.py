"""Statistical model checking by Monte-Carlo rollout.

Rollouts run the full game (ground-truth plant plus dead-reckoned perception),
so monitors can compare what the controller believed with what actually
happened - the sensor-error probability estimate is exactly that comparison.

Randomness: one root seed; episode i draws from
``default_rng(SeedSequence(seed, spawn_key=(i,)))``, so results are identical
whether episodes run serially or on a worker pool, and independent of
completion order.  Under a permissive strategy the action is drawn uniformly
from the permitted set (nondeterminism resolved uniformly); with no strategy,
uniformly from all enabled actions.

Probability estimates carry two-sided Clopper-Pearson intervals: exact, and
well-behaved at the 0/1 estimates the sensor-error query routinely produces.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.stats import beta as _beta

from .dynamics import ActionValue
from .errors import ScenarioError
from .fixedpoint import to_real
from .game import encode, enabled_actions, initial_state, step_detailed
from .reward import (RewardAutomaton, compute_flags, default_automaton,
                     eval_reward_function, ra_step)
from .scenario import Scenario
from .strategies import Strategy

__all__ = ["Trace", "ProbabilityEstimate", "simulate", "estimate_probability",
           "traces_to_csv", "write_traces", "read_traces_csv",
           "sensor_error_monitor", "distance_below_monitor", "TRACE_COLUMNS"]

TRACE_COLUMNS = ("episode", "step", "t", "x", "y", "v", "acc", "head",
                 "iX", "iY", "iV", "iAcc", "iHead", "action", "iJerk", "iTurn",
                 "dis", "sa", "co", "pr", "ra_state", "rf")

_ROW_DTYPE = np.dtype([
    ("step", "i8"), ("t", "f8"),
    ("x", "f8"), ("y", "f8"), ("v", "f8"), ("acc", "f8"), ("head", "f8"),
    ("iX", "i8"), ("iY", "i8"), ("iV", "i8"), ("iAcc", "i8"), ("iHead", "i8"),
    ("action", "i8"), ("iJerk", "i8"), ("iTurn", "i8"),
    ("dis", "f8"), ("sa", "f8"), ("co", "f8"), ("pr", "f8"),
    ("ra_state", "U24"), ("rf", "f8"),
])


@dataclass(frozen=True, eq=False)
class Trace:
    """One rollout, one row per sensing boundary (t = 0 included)."""

    episode: int
    seed: int
    rows: np.ndarray                  # structured, _ROW_DTYPE
    collided: bool
    offroad: bool
    reached_goal: bool
    min_true_distance: float


@dataclass(frozen=True)
class ProbabilityEstimate:
    p_hat: float
    low: float
    high: float
    n: int
    successes: int
    level: float
    seed: int


def _episode_rng(seed: int, episode: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(episode,)))


def _row(plant, perceived, step_idx: int, t: float, action_idx: int,
         act: ActionValue | None, dis: float, ra_state: str,
         clocks, rf: float) -> tuple:
    return (step_idx, t, plant.x, plant.y, plant.v, plant.acc, plant.head,
            perceived.ix, perceived.iy, perceived.iv, perceived.iacc,
            perceived.ihead, action_idx,
            act.ijerk if act else 0, act.iturn if act else 0,
            dis, clocks[0], clocks[1], clocks[2], ra_state, rf)


def _run_episode(sc: Scenario, strat: Strategy | None, episode: int, seed: int,
                 automaton: RewardAutomaton) -> Trace:
    rng = _episode_rng(seed, episode)
    actions = enabled_actions(sc)
    g = initial_state(sc)
    ra_state = automaton.initial
    clocks = (0.0, 0.0, 0.0)
    rows = [_row(g.plant, g.perceived, 0, 0.0, -1, None, g.min_true_distance,
                 ra_state, clocks, 0.0)]
    while not g.terminal and g.decision_index < sc.n_decisions:
        if strat is None:
            choices: Sequence[int] = range(len(actions))
        else:
            choices = strat.permitted(encode(g))
        a_idx = int(choices[int(rng.integers(0, len(choices)))])
        act = actions[a_idx]
        nxt, records = step_detailed(g, act, sc)
        flags = compute_flags(g, nxt, sc)
        ra_state_new, clocks_new = ra_step(automaton, ra_state, flags,
                                           float(sc.timing.c2), clocks)
        rf = eval_reward_function(flags, flags.at_goal)
        for j, rec in enumerate(records):
            last = j == len(records) - 1
            rows.append(_row(rec.plant, rec.perceived, rec.sense_index, rec.t,
                             a_idx, act, rec.min_distance,
                             ra_state_new if last else ra_state,
                             clocks_new if last else clocks,
                             rf if last else 0.0))
        ra_state, clocks = ra_state_new, clocks_new
        g = nxt
    arr = np.array(rows, dtype=_ROW_DTYPE)
    return Trace(episode=episode, seed=seed, rows=arr,
                 collided=g.collided, offroad=g.offroad,
                 reached_goal=g.reached_goal,
                 min_true_distance=g.min_true_distance)


def _episode_worker(args):
    sc, strat, episode, seed, automaton = args
    return _run_episode(sc, strat, episode, seed, automaton)


def trace_from_actions(sc: Scenario, acts: Sequence[ActionValue],
                       automaton: RewardAutomaton | None = None) -> Trace:
    """Deterministic replay of a fixed action sequence as a single trace."""
    automaton = automaton or default_automaton()
    actions = enabled_actions(sc)
    index_of = {a: i for i, a in enumerate(actions)}
    g = initial_state(sc)
    ra_state = automaton.initial
    clocks = (0.0, 0.0, 0.0)
    rows = [_row(g.plant, g.perceived, 0, 0.0, -1, None, g.min_true_distance,
                 ra_state, clocks, 0.0)]
    for act in acts:
        if g.terminal or g.decision_index >= sc.n_decisions:
            break
        a_idx = index_of[act]
        nxt, records = step_detailed(g, act, sc)
        flags = compute_flags(g, nxt, sc)
        ra_state_new, clocks_new = ra_step(automaton, ra_state, flags,
                                           float(sc.timing.c2), clocks)
        rf = eval_reward_function(flags, flags.at_goal)
        for j, rec in enumerate(records):
            last = j == len(records) - 1
            rows.append(_row(rec.plant, rec.perceived, rec.sense_index, rec.t,
                             a_idx, act, rec.min_distance,
                             ra_state_new if last else ra_state,
                             clocks_new if last else clocks,
                             rf if last else 0.0))
        ra_state, clocks = ra_state_new, clocks_new
        g = nxt
    arr = np.array(rows, dtype=_ROW_DTYPE)
    return Trace(episode=0, seed=-1, rows=arr, collided=g.collided,
                 offroad=g.offroad, reached_goal=g.reached_goal,
                 min_true_distance=g.min_true_distance)


def simulate(sc: Scenario, strat: Strategy | None, n: int, seed: int,
             automaton: RewardAutomaton | None = None, jobs: int = 1) -> list[Trace]:
    """n independent rollouts, fully determined by (scenario, strategy, seed)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    automaton = automaton or default_automaton()
    if jobs > 1:
        args = [(sc, strat, i, seed, automaton) for i in range(n)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            traces = list(pool.map(_episode_worker, args,
                                   chunksize=max(1, n // (jobs * 4))))
    else:
        traces = [_run_episode(sc, strat, i, seed, automaton) for i in range(n)]
    return traces


def estimate_probability(sc: Scenario, strat: Strategy | None,
                         monitor: Callable[[Trace], bool], n: int, seed: int,
                         level: float = 0.95, min_samples: int = 30,
                         automaton: RewardAutomaton | None = None,
                         jobs: int = 1) -> ProbabilityEstimate:
    """Fraction of rollouts satisfying the monitor, with an exact CI."""
    if n < min_samples:
        raise ValueError(f"n={n} is below the sample floor {min_samples}")
    if not (0 < level < 1):
        raise ValueError("confidence level must be in (0, 1)")
    traces = simulate(sc, strat, n, seed, automaton=automaton, jobs=jobs)
    k = sum(1 for tr in traces if monitor(tr))
    low, high = _clopper_pearson(k, n, level)
    return ProbabilityEstimate(p_hat=k / n, low=low, high=high, n=n,
                               successes=k, level=level, seed=seed)


def _clopper_pearson(k: int, n: int, level: float) -> tuple[float, float]:
    alpha = 1.0 - level
    low = 0.0 if k == 0 else float(_beta.ppf(alpha / 2, k, n - k + 1))
    high = 1.0 if k == n else float(_beta.ppf(1 - alpha / 2, k + 1, n - k))
    return low, high


# ---------------------------------------------------------------------------
# monitors


def sensor_error_monitor(sc: Scenario, var: str = "x",
                         thd: float | None = None) -> Callable[[Trace], bool]:
    """|ground truth - perceived| >= THD at some sensing boundary."""
    pairs = {"x": ("x", "iX"), "y": ("y", "iY"), "v": ("v", "iV"),
             "acc": ("acc", "iAcc"), "head": ("head", "iHead")}
    if var not in pairs:
        raise ValueError(f"unknown monitored variable '{var}' (one of {list(pairs)})")
    threshold = sc.thresholds.thd if thd is None else float(thd)
    cv, iv = pairs[var]
    scale = sc.scale

    def monitor(tr: Trace) -> bool:
        truth = tr.rows[cv]
        believed = np.array([to_real(int(s), scale) for s in tr.rows[iv]])
        return bool(np.any(np.abs(truth - believed) >= threshold))

    return monitor


def distance_below_monitor(threshold: float) -> Callable[[Trace], bool]:
    """True ground-truth obstacle distance dropped below the threshold."""

    def monitor(tr: Trace) -> bool:
        return bool(np.any(tr.rows["dis"] < threshold))

    return monitor


# ---------------------------------------------------------------------------
# CSV export


def _fmt(v) -> str:
    if isinstance(v, (np.floating, float)):
        return repr(float(v))
    if isinstance(v, (np.integer, int)):
        return str(int(v))
    return str(v)


def traces_to_csv(traces: Sequence[Trace]) -> str:
    lines = [",".join(TRACE_COLUMNS)]
    for tr in traces:
        for row in tr.rows:
            vals = [tr.episode] + [row[name] for name in TRACE_COLUMNS[1:]]
            lines.append(",".join(_fmt(v) for v in vals))
    return "\n".join(lines) + "\n"


def write_traces(traces: Sequence[Trace], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(traces_to_csv(traces))


def read_traces_csv(path) -> list[Trace]:
    """Rebuild traces from a CSV export (episode grouping, full columns)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != ",".join(TRACE_COLUMNS):
        raise ScenarioError("unrecognized trace CSV header", field=str(path), line=1)
    grouped: dict[int, list[tuple]] = {}
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(TRACE_COLUMNS):
            raise ScenarioError("wrong number of columns", field=str(path), line=i)
        ep = int(parts[0])
        row = []
        for name, raw in zip(TRACE_COLUMNS[1:], parts[1:]):
            kind = _ROW_DTYPE[name].kind
            if kind == "f":
                row.append(float(raw))
            elif kind == "i":
                row.append(int(raw))
            else:
                row.append(raw)
        grouped.setdefault(ep, []).append(tuple(row))
    out = []
    for ep in sorted(grouped):
        arr = np.array(grouped[ep], dtype=_ROW_DTYPE)
        out.append(Trace(episode=ep, seed=-1, rows=arr, collided=False,
                         offroad=False, reached_goal=False,
                         min_true_distance=float(arr["dis"].min())))
    return out
