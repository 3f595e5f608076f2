"""Exception hierarchy shared by the solver, experiments and CLI."""

from typing import Optional


class SpilloverError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(SpilloverError):
    """A model parameter lies outside its domain."""


class ConfigurationError(SpilloverError):
    """A grid, time step or file reference cannot be used as configured."""


class ParseError(SpilloverError):
    """A parameter or network document is not well formed."""


class ValidationError(SpilloverError):
    """A parsed document violates a domain invariant."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class NonConvergenceError(SpilloverError):
    """An iteration hit its cap before reaching tolerance."""

    def __init__(
        self,
        message: str,
        residual: float = float("nan"),
        trace: Optional[list] = None,
        sector: Optional[int] = None,
    ):
        super().__init__(message)
        self.residual = residual
        self.trace = list(trace or [])
        self.sector = sector

    def tagged(self, sector: int) -> "NonConvergenceError":
        """Return a copy that names the sector whose solve failed."""
        return NonConvergenceError(
            f"sector {sector}: {self}", residual=self.residual, trace=self.trace, sector=sector
        )


class SingularJacobianError(SpilloverError):
    """The Newton linear system could not be solved."""


class DegenerateAggregateError(SpilloverError):
    """The price aggregate is not strictly positive."""


class SeriesDivergentError(SpilloverError):
    """f1 * spectral_radius(S) >= 1, so the spillover series diverges."""


class RankDeficientError(SpilloverError):
    """The regression Jacobian lost rank."""
