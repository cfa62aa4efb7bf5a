"""Tabular Q-learning over the game, with or without a shield.

The learner observes state keys (perceived significands + decision index) and
picks actions epsilon-greedily, restricted to the shield's permitted set when
one is supplied - so every state-action pair it ever executes or stores is
shield-permitted, and shielded learning cannot violate safety that the shield
rules out.  Ground-truth violations terminate unshielded episodes after the
automaton's punishing state has been applied once.

Reward sources are interchangeable per-step scalars: the scalar reward
function, or the increment of (sa + co + pr) over the decision period.

Hyperparameter defaults (alpha 0.5, gamma 0.95, epsilon 1.0 with 0.95
multiplicative decay to a 0.05 floor) were tuned once on the corridor
scenario and frozen; nothing here is adaptive, so identical (scenario,
config, seed) gives an identical table.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import StrategyDomainError
from .game import StateKey, encode, enabled_actions, initial_state, step
from .reward import (RewardAutomaton, compute_flags, default_automaton,
                     eval_reward_automaton_sum, eval_reward_function, ra_step)
from .scenario import Scenario
from .strategies import DeterministicStrategy, PermissiveStrategy, Strategy

__all__ = ["QTable", "LearnConfig", "EpisodeStats", "q_learn", "extract_policy",
           "evaluate_strategy", "stats_to_csv"]


@dataclass(eq=False)
class QTable:
    mact: int
    values: dict[tuple[StateKey, int], float] = field(default_factory=dict)
    visits: dict[tuple[StateKey, int], int] = field(default_factory=dict)
    seen_keys: set[StateKey] = field(default_factory=set)

    def get(self, key: StateKey, action: int) -> float:
        return self.values.get((key, action), 0.0)

    def best(self, key: StateKey, permitted) -> tuple[int, float]:
        """Greedy action among ``permitted`` with ties to the lowest index."""
        best_a = permitted[0]
        best_q = self.get(key, best_a)
        for a in permitted[1:]:
            q = self.get(key, a)
            if q > best_q:
                best_a, best_q = a, q
        return best_a, best_q


@dataclass(frozen=True)
class LearnConfig:
    episodes: int
    alpha: float = 0.5
    gamma: float = 0.95
    epsilon_initial: float = 1.0
    epsilon_decay: float = 0.95
    epsilon_floor: float = 0.05
    reward_source: str = "automaton"          # "automaton" | "function"
    shield: PermissiveStrategy | None = None
    seed: int = 0
    # Automaton mode only: terminal bonus when the episode ends inside the
    # goal region.  The clock sum alone is indifferent between reaching the
    # goal and progressing forever (ending the run stops accrual); the
    # original learning objective expresses reach-the-goal as a side condition
    # of the query, which plain tabular Q-learning cannot see.  Matches the
    # goal coefficient of the scalar reward function.
    goal_bonus: float = 100.0

    def __post_init__(self):
        if not (0 < self.alpha <= 1):
            raise ValueError("alpha must be in (0, 1]")
        if not (0 <= self.gamma <= 1):
            raise ValueError("gamma must be in [0, 1]")
        for e in (self.epsilon_initial, self.epsilon_decay, self.epsilon_floor):
            if not (0 <= e <= 1):
                raise ValueError("epsilon parameters must be in [0, 1]")
        if self.reward_source not in ("automaton", "function"):
            raise ValueError("reward_source must be 'automaton' or 'function'")
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")


@dataclass(frozen=True)
class EpisodeStats:
    episode: int
    total_reward: float
    reached_goal: bool
    violations: int
    steps: int
    epsilon: float


def _episode_rng(seed: int, episode: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(episode,)))


def q_learn(sc: Scenario, ra_or_rf: RewardAutomaton | None,
            cfg: LearnConfig) -> tuple[QTable, list[EpisodeStats]]:
    """Episodic tabular Q-learning to the horizon MAXT."""
    automaton = ra_or_rf
    if cfg.reward_source == "automaton" and automaton is None:
        automaton = default_automaton()
    actions = enabled_actions(sc)
    all_actions = tuple(range(len(actions)))
    shield = cfg.shield
    q = QTable(mact=len(actions))
    stats: list[EpisodeStats] = []

    init = initial_state(sc)
    if shield is not None and encode(init) not in shield:
        raise StrategyDomainError(encode(init))

    for ep in range(cfg.episodes):
        rng = _episode_rng(cfg.seed, ep)
        eps = max(cfg.epsilon_floor,
                  cfg.epsilon_initial * cfg.epsilon_decay ** ep)
        g = init
        ra_state = automaton.initial if automaton else None
        clocks = (0.0, 0.0, 0.0)
        total = 0.0
        violations = 0
        steps = 0
        while not g.terminal and g.decision_index < sc.n_decisions:
            key = encode(g)
            q.seen_keys.add(key)
            permitted = shield.permitted(key) if shield is not None else all_actions
            if rng.random() < eps:
                a = int(permitted[int(rng.integers(0, len(permitted)))])
            else:
                a, _ = q.best(key, permitted)
            assert shield is None or a in permitted
            nxt = step(g, actions[a], sc)
            flags = compute_flags(g, nxt, sc)
            if cfg.reward_source == "automaton":
                ra_state, clocks_new = ra_step(automaton, ra_state, flags,
                                               float(sc.timing.c2), clocks)
                r = (eval_reward_automaton_sum(clocks_new)
                     - eval_reward_automaton_sum(clocks))
                clocks = clocks_new
                if nxt.reached_goal:
                    r += cfg.goal_bonus
            else:
                r = eval_reward_function(flags, flags.at_goal)
            total += r
            steps += 1
            violated = nxt.collided or nxt.offroad
            if violated:
                violations += 1
            terminal = violated or nxt.reached_goal or nxt.decision_index >= sc.n_decisions
            key2 = encode(nxt)
            if terminal:
                target = r
            else:
                q.seen_keys.add(key2)
                permitted2 = (shield.permitted(key2) if shield is not None
                              else all_actions)
                _, best_q = q.best(key2, permitted2)
                target = r + cfg.gamma * best_q
            old = q.get(key, a)
            q.values[(key, a)] = old + cfg.alpha * (target - old)
            q.visits[(key, a)] = q.visits.get((key, a), 0) + 1
            g = nxt
        stats.append(EpisodeStats(episode=ep, total_reward=total,
                                  reached_goal=g.reached_goal,
                                  violations=violations, steps=steps,
                                  epsilon=eps))
    return q, stats


def extract_policy(q: QTable, shield: PermissiveStrategy | None = None
                   ) -> DeterministicStrategy:
    """Greedy policy: argmax over (shield-permitted) actions, ties and
    never-visited keys resolve to the lowest permitted index."""
    keys = set(q.seen_keys) | {k for k, _ in q.values}
    if shield is not None:
        keys |= set(shield.table)
    table: dict[StateKey, int] = {}
    for key in keys:
        if shield is not None and key in shield:
            permitted = shield.permitted(key)
        elif shield is not None:
            # seen during learning but outside the shield domain (terminal
            # successors); no action will ever be asked for - skip
            continue
        else:
            permitted = tuple(range(q.mact))
        a, _ = q.best(key, permitted)
        table[key] = int(a)
    return DeterministicStrategy(mact=q.mact, table=table)


@dataclass(frozen=True)
class EvaluationResult:
    episodes: int
    goal_rate: float
    mean_return: float
    violation_rate: float
    domain_misses: int


def evaluate_strategy(sc: Scenario, strat: Strategy | None, n: int, seed: int,
                      reward_source: str = "automaton",
                      automaton: RewardAutomaton | None = None,
                      goal_bonus: float = 100.0) -> EvaluationResult:
    """Rollout evaluation; a rollout hitting a key outside the strategy's
    domain counts as a failed episode (an incomplete policy cannot drive)."""
    if reward_source == "automaton" and automaton is None:
        automaton = default_automaton()
    actions = enabled_actions(sc)
    goals = 0
    violations = 0
    misses = 0
    returns = []
    for ep in range(n):
        rng = _episode_rng(seed, ep)
        g = initial_state(sc)
        ra_state = automaton.initial if automaton else None
        clocks = (0.0, 0.0, 0.0)
        total = 0.0
        try:
            while not g.terminal and g.decision_index < sc.n_decisions:
                if strat is None:
                    a = int(rng.integers(0, len(actions)))
                else:
                    permitted = strat.permitted(encode(g))
                    a = int(permitted[int(rng.integers(0, len(permitted)))]) \
                        if len(permitted) > 1 else int(permitted[0])
                nxt = step(g, actions[a], sc)
                flags = compute_flags(g, nxt, sc)
                if reward_source == "automaton":
                    ra_state, clocks_new = ra_step(automaton, ra_state, flags,
                                                   float(sc.timing.c2), clocks)
                    total += (eval_reward_automaton_sum(clocks_new)
                              - eval_reward_automaton_sum(clocks))
                    clocks = clocks_new
                    if nxt.reached_goal:
                        total += goal_bonus
                else:
                    total += eval_reward_function(flags, flags.at_goal)
                g = nxt
        except StrategyDomainError:
            misses += 1
            returns.append(total)
            continue
        returns.append(total)
        if g.reached_goal:
            goals += 1
        if g.collided or g.offroad:
            violations += 1
    return EvaluationResult(episodes=n, goal_rate=goals / n,
                            mean_return=float(np.mean(returns)),
                            violation_rate=violations / n,
                            domain_misses=misses)


def stats_to_csv(stats: list[EpisodeStats]) -> str:
    lines = ["episode,return,goal,violations"]
    for s in stats:
        lines.append(f"{s.episode},{repr(s.total_reward)},{int(s.reached_goal)},"
                     f"{s.violations}")
    return "\n".join(lines) + "\n"
