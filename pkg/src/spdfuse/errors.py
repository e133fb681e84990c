"""Exception hierarchy shared by all spdfuse modules.

Every error carries an ``exit_code`` so the command-line layer can map
failures onto its stable contract: 1 = usage, 2 = data, 3 = numeric.
"""


class SpdFuseError(Exception):
    """Base class for all spdfuse errors."""

    exit_code = 2


class UsageError(SpdFuseError):
    """Bad flags, bad config keys, bad parameter values."""

    exit_code = 1


class DataError(SpdFuseError):
    """Broken or inconsistent input data."""

    exit_code = 2


class NumericError(SpdFuseError):
    """Numerical failure during computation."""

    exit_code = 3


# --- numeric failures -------------------------------------------------------

class NonFiniteInput(NumericError):
    """Matrix or image contains NaN or Inf."""


class NonFiniteLoss(NumericError):
    """A loss evaluated to NaN or Inf; the training step is aborted."""


class NonPositiveEigenvalue(NumericError):
    """Log map requested on a matrix that is not positive definite."""


class RetractionFailure(NumericError):
    """Stiefel retraction candidate is numerically rank-deficient."""


# --- contract violations on data --------------------------------------------

class DimMismatch(DataError):
    """Matrix dimensions do not line up."""


class SizeMismatch(DataError):
    """Images do not share the same spatial size."""


class GeometryMismatch(DataError):
    """Image size is incompatible with the patch geometry."""


class ColumnMismatch(DataError):
    """Patch matrices of the two modalities differ in column count."""


class TooFewColumns(DataError):
    """Covariance needs at least two observations."""


class TooSmall(DataError):
    """Image is smaller than the analysis window."""


class MissingCache(DataError):
    """Backward pass called before the matching forward pass."""


class DegenerateSet(DataError):
    """Point set has fewer than two points in some modality."""


class ZeroIntra(DataError):
    """Intra-modal mean distance is zero; distance ratio undefined."""


class KTooLarge(UsageError):
    """Neighbor count must be smaller than the point count."""


class BadLevel(UsageError):
    """Noise level outside the valid range for the chosen noise kind."""


class ZeroDim(UsageError):
    """Requested image size has a zero dimension."""


# --- file/format failures ----------------------------------------------------

class DecodeError(DataError):
    """Image file is malformed."""


class UnsupportedFormat(DataError):
    """File extension or pixel format is not supported."""


class IoError(DataError):
    """Filesystem failure while reading or writing."""


class VersionMismatch(DataError):
    """Checkpoint magic or version is not one we can read."""


class CorruptFile(DataError):
    """Checkpoint or dump file fails header/length validation."""


class ConfigError(UsageError):
    """Config file is missing, malformed, or has unknown/missing keys."""
