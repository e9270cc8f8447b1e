"""Errors raised throughout capgp.

Validation errors mean the caller handed in something malformed. Numerical
errors mean the inputs were well formed but the linear algebra or the
optimizer could not produce a result.
"""

from typing import Mapping, Optional


class Error(Exception):
    """Base class for exceptions."""


class ValidationError(Error, ValueError):
    """Input violates a documented precondition or invariant."""


class DimensionMismatch(ValidationError):
    """Array shapes or feature counts do not agree."""


class EmptyInput(ValidationError):
    """An operation that needs at least one element got none."""


class TooShort(ValidationError):
    """A capacity trajectory has too few points for the requested lags."""


class TooFewPairs(ValidationError):
    """Not enough input/output pairs for training or cross-validation."""


class UnknownCase(ValidationError):
    """A case id is not present in the dataset."""


class OverlappingSplit(ValidationError):
    """Train and test case ids intersect."""


class NonPositiveTemperature(ValidationError):
    """A temperature in Kelvin is not strictly positive."""


class BelowAbsoluteZero(ValidationError):
    """A temperature in degrees Celsius is at or below -273.15."""


class InvalidFeature(ValidationError):
    """A feature vector violates its physical-range invariants."""


class IncompatibleParams(ValidationError):
    """A hyperparameter set does not match the kernel it is used with."""


class ParseError(ValidationError):
    """A data file could not be parsed."""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column '{column}'")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class NumericalError(Error, ArithmeticError):
    """A numerical routine failed on well-formed input."""


class NotPositiveDefinite(NumericalError):
    """Cholesky factorization failed."""

    def __init__(self, message: str, params: Optional[Mapping[str, float]] = None):
        self.params = dict(params) if params is not None else None
        if self.params:
            rendered = ", ".join(f"{k}={v:.6g}" for k, v in self.params.items())
            message = f"{message} [{rendered}]"
        super().__init__(message)


class SingularTriangular(NumericalError):
    """A triangular system has a zero on its diagonal."""


class NonPositiveBase(NumericalError):
    """The polynomial kernel base is not strictly positive."""


class AllStartsFailed(NumericalError):
    """Every optimizer restart failed to produce a finite objective."""


class ModelIntegrityError(NumericalError):
    """A deserialized model does not reproduce its stored likelihood."""
