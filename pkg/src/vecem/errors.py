"""Exception types shared across the package.

The CLI maps these onto exit codes: invalid parameters are usage errors,
parse and shape problems are data errors, and factorization or degeneracy
failures are numerical errors.
"""


class VecemError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(VecemError, ValueError):
    """A parameter is outside its documented range (bad family name, m < 1, ...)."""


class ShapeError(VecemError, ValueError):
    """Array arguments have inconsistent or unsupported shapes."""


class ParseError(VecemError, ValueError):
    """A text input could not be parsed.

    Carries the 1-based row and column of the offending cell when known.
    """

    def __init__(self, message, row=None, column=None):
        if row is not None and column is not None:
            message = f"{message} (row {row}, column {column})"
        super().__init__(message)
        self.row = row
        self.column = column


class NumericalError(VecemError, ArithmeticError):
    """Base class for runtime numerical failures."""


class ConditioningError(NumericalError):
    """A covariance factorization failed even after diagonal jitter."""


class DegenerateDataError(NumericalError):
    """Data admits no well-posed model (constant input column, zero variance, ...)."""


class RankError(NumericalError):
    """A regression design is rank deficient."""


class FitError(VecemError):
    """No optimizer start produced a finite objective."""
