"""Exception types raised across the package."""

from __future__ import annotations


class RerandError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(RerandError):
    """Invalid, incomplete, or unknown run configuration."""


class DegenerateDesignError(RerandError):
    """A treatment arm is empty or too small for the requested estimator."""


class VarianceUndefinedError(DegenerateDesignError):
    """A within-arm sample variance needs at least two units."""


class SingularCovariatesError(RerandError):
    """The covariate covariance matrix is not positive definite.

    ``columns`` lists the offending covariate column indices (zero-variance
    or linearly dependent columns).
    """

    def __init__(self, message: str, columns: list[int] | None = None):
        super().__init__(message)
        self.columns = list(columns) if columns is not None else []


class CollinearDesignError(RerandError):
    """A regression design matrix is rank deficient.

    ``columns`` lists the design columns that are linear combinations of
    earlier ones.
    """

    def __init__(self, message: str, columns: list[int] | None = None):
        super().__init__(message)
        self.columns = list(columns) if columns is not None else []


class LeverageError(RerandError):
    """A leverage value of one makes HC2/HC3 residual inflation undefined.

    ``indices`` lists the fully leveraged observations.
    """

    def __init__(self, message: str, indices: list[int] | None = None):
        super().__init__(message)
        self.indices = list(indices) if indices is not None else []


class AcceptanceFailureError(RerandError):
    """No allocation satisfied the balance threshold within ``max_tries``.

    ``best_distance`` records the smallest balance statistic seen, so the
    caller can tell a hopeless threshold from plain bad luck.
    """

    def __init__(self, message: str, best_distance: float, tries: int):
        super().__init__(message)
        self.best_distance = best_distance
        self.tries = tries


class EnumerationSizeError(RerandError):
    """The allocation space is too large to enumerate exhaustively."""


class GridBalanceError(RerandError):
    """Result records do not form a complete balanced factorial grid."""


class BaselineError(RerandError):
    """The records lack the baseline method needed for relative tables."""


class SampleSizeError(RerandError):
    """Too few samples to compute the requested summary."""
