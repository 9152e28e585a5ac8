"""Exception taxonomy. Every error the package raises carries a short
machine-parseable category that the CLI prints on failure."""


class GridcastError(Exception):
    category = "internal"


class ShapeError(GridcastError):
    """Array extents do not satisfy an operation's contract."""

    category = "shape"


class DepthError(GridcastError):
    """Temporal kernel depth incompatible with the incoming volume."""

    category = "depth"


class ConfigError(GridcastError):
    """Bad configuration key, value, or combination."""

    category = "config"


class DataError(GridcastError):
    """Malformed or inconsistent input data."""

    category = "data"


class FormatError(GridcastError):
    """Corrupt, truncated, or version-incompatible serialized artifact."""

    category = "format"


class StateError(GridcastError):
    """Operation invoked without the state it requires (e.g. a backward
    pass without the matching forward cache)."""

    category = "state"


class RangeError(GridcastError):
    """Index or time range outside the available data."""

    category = "range"


class DivergenceError(GridcastError):
    """Training produced a non-finite loss."""

    category = "diverged"
