"""Exception taxonomy shared across the package.

Every data-validation or numerical failure raises a subclass of
:class:`HeatscError`, so callers (and the CLI) can distinguish bad input
from genuine bugs.
"""


class HeatscError(Exception):
    """Base class for all package-specific errors."""


# ---------------------------------------------------------------------------
# Panel construction and preprocessing
# ---------------------------------------------------------------------------

class MissingCellError(HeatscError):
    """A unit/time pair is absent from the input records."""


class DuplicateCellError(HeatscError):
    """A unit/time pair appears more than once in the input records."""


class NonFiniteValueError(HeatscError):
    """A NaN or infinity was found where a finite number is required."""


class AllZeroWindowError(HeatscError):
    """A zero-rate cell cannot be imputed: its whole rolling window is zero."""


class WindowOutOfRangeError(HeatscError):
    """An episode window does not fit inside the panel time range."""


# ---------------------------------------------------------------------------
# Spatial structures
# ---------------------------------------------------------------------------

class DegenerateGeometryError(HeatscError):
    """All centroids coincide; no meaningful distances exist."""


class SingularSystemError(HeatscError):
    """A linear system that should be well-posed failed to solve."""


# ---------------------------------------------------------------------------
# Exposure detection
# ---------------------------------------------------------------------------

class EmptySeriesError(HeatscError):
    """A percentile was requested on an empty series."""


# ---------------------------------------------------------------------------
# Donor pools
# ---------------------------------------------------------------------------

class EmptyPoolError(HeatscError):
    """No unit satisfies the donor eligibility predicate."""


# ---------------------------------------------------------------------------
# Estimation
# ---------------------------------------------------------------------------

class DimensionMismatchError(HeatscError):
    """Weight vector and donor matrix shapes disagree."""


class NonPositiveDenominatorError(HeatscError):
    """A relative risk denominator is zero or negative on the rate scale."""


class NonFiniteDensityError(HeatscError):
    """The log posterior evaluated to NaN/inf at the initial point."""


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

class ZeroPreSdError(HeatscError):
    """Heat is constant over the pre window; z-scoring is undefined."""


class NonPositiveTargetError(HeatscError):
    """A calibration target rate is zero or negative."""


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

class MisalignmentError(HeatscError):
    """Fit paths and ground-truth cells do not line up."""


class IncompleteGridError(HeatscError):
    """The scenario/method grid has missing cells."""
