"""Exception and warning types shared across the package.

Errors are grouped by how the CLI reports them: ConfigError maps to exit
code 2, DataError to 3, and NumericalError to 4.
"""


class ExpomatchError(Exception):
    """Base class for all package errors."""


class ConfigError(ExpomatchError):
    """Invalid or missing run configuration."""


class DataError(ExpomatchError):
    """Input data violates a structural requirement."""


class NumericalError(ExpomatchError):
    """A numerical procedure failed or degenerated."""


# -- ingestion -----------------------------------------------------------

class MissingColumnError(DataError):
    """A required column is absent from the input table."""


class EmptyDatasetError(DataError):
    """No valid rows survived ingestion."""


class DuplicateKeyError(DataError):
    """Two rows share the same zip_id."""


# -- exposure ------------------------------------------------------------

class WeightSumViolationError(DataError):
    """A ZIP's grid weights do not sum to 1 within tolerance."""


class EmptyReferenceError(DataError):
    """Percentile requested against an empty reference sample."""


# -- glm -----------------------------------------------------------------

class SeparationError(NumericalError):
    """Logistic fit shows (quasi-)complete separation."""


class SingularError(NumericalError):
    """Information matrix is rank-deficient."""


class NoConvergenceError(NumericalError):
    """IRLS failed to converge within the iteration budget."""


class AllZeroCountsError(NumericalError):
    """Poisson outcome vector is identically zero."""


class ColumnMismatchError(DataError):
    """Design matrix columns do not match the fitted model."""


# -- matching / stratification -------------------------------------------

class InsufficientUnitsError(DataError):
    """Too few treated or control units for the operation."""


class EmptyOverlapError(DataError):
    """Treated and control propensity supports do not intersect."""


class DegenerateQuantilesError(DataError):
    """Propensity ties leave a stratum empty."""


class ZeroPooledSdError(NumericalError):
    """Pooled SD is zero while the group means differ."""


# -- pipeline ------------------------------------------------------------

class IoFailureError(ExpomatchError):
    """Report files could not be written."""


class RegionAnalysisError(ExpomatchError):
    """Wraps a module error with the region it occurred in."""

    def __init__(self, region, cause):
        super().__init__(f"{region}: {cause}")
        self.region = region
        self.cause = cause


# -- warnings ------------------------------------------------------------

class DegenerateGeometryWarning(UserWarning):
    """All units share one location; distances fall back to zero."""


class ZeroPooledSdWarning(UserWarning):
    """Both group variances are zero with equal means; SMD reported as 0."""
