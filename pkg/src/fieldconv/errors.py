"""Exception hierarchy. Every error carries a machine-readable ``category``."""


class FieldConvError(Exception):
    category = "error"
    exit_code = 1


class MeshParseError(FieldConvError):
    category = "parse"
    exit_code = 3


class MeshValidationError(FieldConvError):
    category = "validation"
    exit_code = 4


class NeighborhoodError(FieldConvError):
    """A vertex has no neighbors left inside its geodesic ball."""

    category = "neighborhood"
    exit_code = 5

    def __init__(self, message, vertices=()):
        super().__init__(message)
        self.vertices = list(vertices)


class CacheFormatError(FieldConvError):
    category = "cache_format"
    exit_code = 6


class CacheMismatchError(FieldConvError):
    category = "cache_mismatch"
    exit_code = 7


class ShapeError(FieldConvError, ValueError):
    category = "shape"
    exit_code = 8


class ConfigError(FieldConvError):
    category = "config"
    exit_code = 9


class DataError(FieldConvError):
    category = "data"
    exit_code = 10
