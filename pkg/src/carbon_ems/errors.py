"""Exception types raised across the package."""

from __future__ import annotations


class CaemsError(Exception):
    """Base class for all errors raised by carbon_ems."""


# --- data pipeline ---------------------------------------------------------

class MalformedRow(CaemsError):
    def __init__(self, line: int, reason: str = ""):
        self.line = line
        msg = f"malformed row at line {line}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class EmptySeries(CaemsError):
    pass


class NoPriorValue(CaemsError):
    pass


class MissingSeries(CaemsError):
    pass


class InsufficientHistory(CaemsError):
    pass


class LengthMismatch(CaemsError):
    pass


class ShapeMismatch(CaemsError):
    pass


# --- optimization ------------------------------------------------------------

class InfeasibleBoundary(CaemsError):
    """Device parameters contradict the boundary conditions before any solve."""


class Infeasible(CaemsError):
    pass


class NumericalBreakdown(CaemsError):
    pass


class NodeLimitExceeded(CaemsError):
    """Raised when branch-and-bound stops on its node budget.

    ``plan`` and ``stats`` carry the incumbent (``plan`` may be None).
    """

    def __init__(self, plan, stats):
        self.plan = plan
        self.stats = stats
        super().__init__(f"node limit reached after {stats.nodes_explored} nodes (gap={stats.gap:.3g})")


class HorizonTooLarge(CaemsError):
    pass


class InfeasibleHorizon(CaemsError):
    pass


# --- forecasting -------------------------------------------------------------

class ForecastFailure(CaemsError):
    pass


class EmptyDataset(CaemsError):
    pass


class DivergedLoss(CaemsError):
    pass


class ConfigError(CaemsError):
    pass
