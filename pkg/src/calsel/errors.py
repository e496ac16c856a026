"""Exception types shared across the package.

The CLI maps these to exit codes: usage problems exit 1, data problems exit 2,
numerical failures exit 3.
"""


class CalselError(Exception):
    """Base class for all package errors."""


class ParameterError(CalselError):
    """A parameter violates its domain (bad coefficients, levels, orders)."""


class InitializationError(CalselError):
    """A recursion cannot be initialized under the requested convention."""


class InsufficientDataError(CalselError):
    """Too few observations for the requested operation."""


class RankDeficiencyError(CalselError):
    """A design or moment matrix is singular / rank deficient."""


class SingularityError(CalselError):
    """A formula hits a removable singularity (zero denominator)."""


class InfeasibilityError(CalselError):
    """Zero lies outside the convex hull of the estimating functions."""


class EstimationFailureError(CalselError):
    """An estimation routine found no admissible solution."""


class CapabilityError(CalselError):
    """The requested computation is not supported for this input kind."""


class DataError(CalselError):
    """Malformed or misaligned input data (CSV parsing, column issues)."""
