"""Exception types shared across the package."""


class SccompError(ValueError):
    """Base class for all errors raised by this package."""


class ShapeError(SccompError):
    """Array dimensions are inconsistent with the requested operation."""


class ParameterError(SccompError):
    """A configuration value is outside its legal range."""


class NumericError(SccompError):
    """Input contains NaN/inf or an algorithm hit a numeric failure."""


class FormatError(SccompError):
    """A tensor file or archive does not match the on-disk format."""


class DataError(SccompError):
    """A data file (e.g. predictions CSV) has invalid content."""
