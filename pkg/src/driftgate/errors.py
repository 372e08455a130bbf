"""Exception types shared across the harness."""


class DriftgateError(Exception):
    """Base class for all harness errors."""


class DslSyntaxError(DriftgateError):
    """Rule text could not be parsed.

    Carries 1-based line/column of the offending token.
    """

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class DslTypeError(DriftgateError):
    """Expression tree is ill-typed (e.g. boolean operand to arithmetic)."""


class UnboundParameterError(DriftgateError):
    """A $name reference has no matching card parameter."""

    def __init__(self, name: str):
        super().__init__(f"unbound parameter: {name}")
        self.name = name


class LeakageError(DriftgateError):
    """A rule requested data from a bar after the current one.

    Raising this aborts the run and fails the Anti-Leak gate.
    """


class NondeterminismError(DriftgateError):
    """random()/now() evaluated without an injected seed/clock."""


class LimitExceededError(DriftgateError):
    """Run exceeded its bar-count or wall-clock budget."""

    def __init__(self, message: str = "LIMIT_EXCEEDED"):
        super().__init__(message)


class UnsupportedRuleError(DriftgateError):
    """A card feature (sizing rule, multi-asset execution) is not executable."""


class CardValidationError(DriftgateError):
    """A card failed schema validation where a valid card is required."""

    def __init__(self, violations: list):
        super().__init__("; ".join(violations))
        self.violations = list(violations)
