"""Exception hierarchy shared across the package."""


class CrosscastError(Exception):
    """Base class for all package-specific errors."""


class DataFormatError(CrosscastError):
    """A file could not be parsed; message carries the offending line number."""


class DataError(CrosscastError):
    """Parsed data violates an integrity rule (duplicates, inconsistencies)."""


class ConfigError(CrosscastError):
    """A configuration value is out of range or inconsistent."""


class ShapeError(CrosscastError):
    """An array argument has an incompatible shape."""


class UsageError(CrosscastError):
    """An operation was called in a state where it is undefined."""


class MetricError(CrosscastError):
    """A metric is undefined for the given inputs (e.g. all-zero truths)."""


class DivergenceError(CrosscastError):
    """Training produced a non-finite loss."""
