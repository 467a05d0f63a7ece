"""Exception types shared across the library.

The CLI maps these onto exit codes (config 2, data 3, numeric 4), so
raising the right class matters more than the message wording.
"""


class AtrousSegError(Exception):
    """Base class for all library errors."""


class ShapeError(AtrousSegError, ValueError):
    """Tensor/kernel dimensions are inconsistent with the operation."""


class SizeError(AtrousSegError, ValueError):
    """Requested allocation or index range is out of bounds."""


class PlanError(AtrousSegError, ValueError):
    """Output-stride target cannot be realized on the given architecture."""


class ConfigError(AtrousSegError, ValueError):
    """Malformed or unknown configuration key/value."""


class DataError(AtrousSegError, ValueError):
    """Dataset files missing or malformed."""


class NumericError(AtrousSegError, RuntimeError):
    """Non-finite value encountered during training/inference."""


class MetricError(AtrousSegError, ValueError):
    """Metric undefined for the given inputs (e.g. no scored pixels)."""
