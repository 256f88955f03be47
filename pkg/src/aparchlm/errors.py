"""Exception hierarchy.

Everything raised for bad inputs derives from :class:`DataError` (itself a
``ValueError``) so callers, including the CLI, can separate data problems from
programming faults.
"""

from __future__ import annotations


class DataError(ValueError):
    """Input data or parameters violate an operation's preconditions."""


class DegenerateSeriesError(DataError):
    """Series has zero variance, so moments and autocorrelations are undefined."""


class LagRangeError(DataError):
    """Requested lag horizon is not supported by the sample."""


class ConfigurationError(DataError):
    """Calendar, session or bar-width settings are inconsistent."""


class InsufficientDataError(DataError):
    """Too few usable observations for the requested estimate."""


class ParameterError(DataError):
    """Model parameters fall outside their admissible region."""


class NumericalFailure(DataError):
    """The volatility recursion produced a non-finite value.

    Attributes
    ----------
    index : int
        Position in the series where the recursion broke down.
    """

    def __init__(self, index: int, message: str | None = None) -> None:
        self.index = index
        super().__init__(message or f"non-finite conditional volatility at t={index}")


class RankDeficiencyError(DataError):
    """Hessian or outer-product matrix is singular."""

    def __init__(self, direction: str, message: str | None = None) -> None:
        self.direction = direction
        super().__init__(
            message or f"singular curvature matrix, degenerate direction dominated by {direction!r}"
        )


class ConvergenceError(RuntimeError):
    """No optimisation run converged (raised only where a result cannot be returned)."""
