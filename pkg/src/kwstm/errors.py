"""Exception hierarchy shared across the pipeline."""


class KwsError(Exception):
    """Base class for every error raised by this package."""


class DataError(KwsError):
    """Problems with input data. The CLI maps these to exit code 2."""


class ParseError(DataError):
    pass


class UnsupportedFormat(DataError):
    pass


class MissingClassError(DataError):
    pass


class EmptyClassError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class DimensionError(DataError):
    pass


class ModelVersionError(DataError):
    pass


class StaleCacheError(DataError):
    pass


class ModelDataMismatch(DataError):
    pass


class ConfigError(KwsError):
    """Invalid configuration values. The CLI maps these to exit code 1."""
