"""Exception hierarchy shared across the package.

Every error that a command can surface to a user maps onto one of these
classes; the CLI translates them into stable exit codes.
"""


class RoadshieldError(Exception):
    """Base class for all package-specific errors."""


class ScenarioError(RoadshieldError):
    """Scenario or automaton file violates the schema or its invariants.

    Carries the offending field path and, when known, the source line.
    """

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        prefix = ""
        if field is not None:
            prefix += f"field '{field}'"
        if line is not None:
            prefix += f" (line {line})"
        super().__init__(f"{prefix}: {message}" if prefix else message)


class FixedPointRangeError(RoadshieldError, OverflowError):
    """A value does not fit in the configured significand width."""


class NumericError(RoadshieldError):
    """Integration produced a non-finite value."""


class ContractViolationError(RoadshieldError):
    """An operation was called outside its precondition (e.g. stepping a
    terminal game state)."""


class BudgetExceededError(RoadshieldError):
    """State-space exploration exceeded the configured budget.

    Never silently converted into a verdict.
    """


class StrategyDomainError(RoadshieldError):
    """A rollout or verification reached a state key missing from the
    strategy's domain."""

    def __init__(self, key):
        self.key = key
        super().__init__(f"state key {tuple(key)} is not in the strategy domain")


class EmptyShieldError(RoadshieldError):
    """Shield synthesis found no safe action at the initial state."""


class AutomatonError(RoadshieldError):
    """A reward automaton is malformed or not total/exclusive at runtime."""
