"""Exception types shared across the package."""


class BoterError(Exception):
    """Base class for errors raised by this package."""


class DataFormatError(BoterError):
    """Malformed input data: bad records, duplicate ids, invalid fields."""


class DimensionMismatchError(BoterError):
    """Vector or matrix dimensions do not agree."""


class ConfigError(BoterError):
    """Invalid run configuration."""
