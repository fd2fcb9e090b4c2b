"""Error categories raised across homog.

Every error carries an ``exit_code`` used by the CLI: 2 for bad input or
configuration, 1 for numerical failures.
"""

from __future__ import annotations


class HomogError(Exception):
    """Base class for all homog errors."""

    exit_code = 1


class ParameterError(HomogError, ValueError):
    """A scalar parameter is out of its admissible range."""

    exit_code = 2


class DomainError(HomogError, ValueError):
    """A point or window lies outside the domain it must belong to."""

    exit_code = 2


class ParseError(HomogError, ValueError):
    """A grid-field file could not be read."""

    exit_code = 2

    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EllipticityError(HomogError, ValueError):
    """A coefficient sample is not positive definite."""

    exit_code = 2


class UnsupportedError(HomogError, ValueError):
    """The requested operation is not defined for this input."""

    exit_code = 2


class ConsistencyError(HomogError, ValueError):
    """Two objects that must match (meshes, points, solutions) do not."""


class MismatchError(HomogError, RuntimeError):
    """A periodicity assertion was contradicted by the computed tensors."""


class ResolutionError(HomogError, RuntimeError):
    """A quadrature or mesh is too coarse for a discontinuous integrand."""


class NumericalError(HomogError, RuntimeError):
    """An iterative solve did not reach its tolerance."""

    def __init__(self, message: str, residual: float | None = None) -> None:
        self.residual = residual
        if residual is not None:
            message = f"{message} (residual {residual:.3e})"
        super().__init__(message)


class ConfigError(HomogError, ValueError):
    """A run configuration key is unknown, mistyped or invalid."""

    exit_code = 2

    def __init__(self, key: str, message: str) -> None:
        self.key = key
        super().__init__(message)


class StageError(HomogError):
    """A pipeline stage failed; wraps the original cause."""

    def __init__(self, stage: str, cause: BaseException) -> None:
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
        super().__init__(f"{stage}: {cause}")
