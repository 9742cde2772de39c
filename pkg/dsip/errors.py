"""
Exception types raised by the dsip modules.
"""
from typing import Any


class DsipError(Exception):
    """Base class for all errors raised by dsip."""


class DimensionMismatch(DsipError, ValueError):
    """Vectors or boxes of incompatible dimensions were combined."""


class InvalidBox(DsipError, ValueError):
    """A box has lower > upper somewhere, or no dimensions at all."""


class OutsideBox(DsipError, ValueError):
    """A point that must lie in a box does not."""


class MalformedEdge(DsipError, ValueError):
    """A graph edge is a self-loop, a duplicate, or out of range."""


class Disconnected(DsipError):
    """The communication graph has more than one component."""

    def __init__(self, components: list[set[int]]):
        self.components = components
        shown = ", ".join(
            "{" + ",".join(str(i + 1) for i in sorted(c)) + "}"
            for c in components
        )
        super().__init__(f"Graph is disconnected, components: {shown}")


class NonFiniteValue(DsipError, ArithmeticError):
    """A user supplied handle returned NaN or infinity."""


class BudgetExhausted(DsipError):
    """
    The oracle hit its node limit before certifying the tolerance.
    The best point found so far is kept in `result`, with its honest gap.
    """

    def __init__(self, result: Any):
        self.result = result
        super().__init__(
            f"Node limit reached after {result.nodes_expanded} nodes, "
            f"certified gap {result.certified_gap:.3g}"
        )


class Infeasible(DsipError):
    """The finitely constrained program has no feasible point."""

    def __init__(self, violation: float, report: Any = None,
                 source: str = "subproblem"):
        self.violation = violation
        self.report = report
        super().__init__(
            f"No feasible point in the {source}, least violation "
            f"{violation:.3g}"
        )


class UnsupportedLoss(DsipError):
    """The requested bounding method is not available for this loss."""


class InvalidRadius(DsipError, ValueError):
    """The Wasserstein radius must be positive."""


class InvalidBeta(DsipError, ValueError):
    """The CVaR level must lie in (0, 1]."""


class InvalidPartition(DsipError, ValueError):
    """Samples are not split into nonempty per-agent sets."""


class TooLarge(DsipError):
    """A brute-force oracle was asked to solve a problem beyond its limits."""


class ConfigError(DsipError):
    """An experiment configuration failed validation."""

    def __init__(self, message: str, field: str = "",
                 line: int | None = None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field {field}")
        prefix = ": ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class AgentFailure(DsipError):
    """One or more agents failed during a synchronous round."""

    def __init__(self, round_index: int, failures: dict[int, Exception]):
        self.round_index = round_index
        self.failures = failures
        details = "; ".join(
            f"agent {i + 1}: {e}" for i, e in sorted(failures.items())
        )
        super().__init__(f"Round {round_index} failed ({details})")
