"""Permissive and deterministic strategies over perceived state keys.

Export format (byte-stable: keys sorted, one per line):

    roadshield-strategy v1 <permissive|deterministic> mact=<A>
    <ix> <iy> <iv> <iacc> <ihead> <k> -> <action indices, ascending>
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

from .errors import ScenarioError, StrategyDomainError
from .game import StateKey

__all__ = ["PermissiveStrategy", "DeterministicStrategy", "Strategy",
           "save_strategy", "load_strategy", "strategy_to_text"]


@dataclass(frozen=True, eq=False)
class PermissiveStrategy:
    """State key -> non-empty tuple of permitted action indices."""

    mact: int
    table: Mapping[StateKey, tuple[int, ...]]

    def permitted(self, key: StateKey) -> tuple[int, ...]:
        try:
            return self.table[key]
        except KeyError:
            raise StrategyDomainError(key) from None

    def __contains__(self, key: StateKey) -> bool:
        return key in self.table

    def __len__(self) -> int:
        return len(self.table)

    def pair_set(self) -> set[tuple[StateKey, int]]:
        return {(k, a) for k, acts in self.table.items() for a in acts}


@dataclass(frozen=True, eq=False)
class DeterministicStrategy:
    """State key -> single action index."""

    mact: int
    table: Mapping[StateKey, int]

    def permitted(self, key: StateKey) -> tuple[int, ...]:
        try:
            return (self.table[key],)
        except KeyError:
            raise StrategyDomainError(key) from None

    def __contains__(self, key: StateKey) -> bool:
        return key in self.table

    def __len__(self) -> int:
        return len(self.table)


Strategy = PermissiveStrategy | DeterministicStrategy


def strategy_to_text(strat: Strategy) -> str:
    kind = "deterministic" if isinstance(strat, DeterministicStrategy) else "permissive"
    lines = [f"roadshield-strategy v1 {kind} mact={strat.mact}"]
    for key in sorted(strat.table):
        acts = strat.table[key]
        if isinstance(strat, DeterministicStrategy):
            acts = (acts,)
        body = " ".join(str(a) for a in acts)
        lines.append(f"{key.ix} {key.iy} {key.iv} {key.iacc} {key.ihead} "
                     f"{key.decision_index} -> {body}")
    return "\n".join(lines) + "\n"


def save_strategy(strat: Strategy, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(strategy_to_text(strat))


def _parse_key(fields: Iterable[str]) -> StateKey:
    vals = [int(f) for f in fields]
    return StateKey(*vals)


def load_strategy(path) -> Strategy:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ScenarioError("empty strategy file", field=str(path))
    head = lines[0].split()
    if len(head) != 4 or head[0] != "roadshield-strategy" or head[1] != "v1":
        raise ScenarioError("unrecognized strategy header", field=str(path), line=1)
    kind = head[2]
    if kind not in ("permissive", "deterministic"):
        raise ScenarioError(f"unknown strategy kind '{kind}'", field=str(path), line=1)
    if not head[3].startswith("mact="):
        raise ScenarioError("missing mact= in header", field=str(path), line=1)
    mact = int(head[3][5:])

    table: dict[StateKey, tuple[int, ...] | int] = {}
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            left, right = line.split("->")
            key = _parse_key(left.split())
            acts = tuple(int(a) for a in right.split())
        except ValueError:
            raise ScenarioError("malformed strategy line", field=str(path), line=i)
        if not acts:
            raise ScenarioError("strategy line permits no action", field=str(path), line=i)
        if any(a < 0 or a >= mact for a in acts):
            raise ScenarioError("action index out of range", field=str(path), line=i)
        if list(acts) != sorted(set(acts)):
            raise ScenarioError("action indices must be ascending and unique",
                                field=str(path), line=i)
        if kind == "deterministic":
            if len(acts) != 1:
                raise ScenarioError("deterministic strategy needs exactly one action",
                                    field=str(path), line=i)
            table[key] = acts[0]
        else:
            table[key] = acts
    if kind == "deterministic":
        return DeterministicStrategy(mact=mact, table=table)
    return PermissiveStrategy(mact=mact, table=table)
