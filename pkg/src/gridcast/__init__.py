"""Grid demand forecasting on city grids: data pipeline, from-scratch
convolutional forecasters, baselines, and evaluation statistics."""

from .errors import (
    ConfigError,
    DataError,
    DepthError,
    DivergenceError,
    FormatError,
    GridcastError,
    RangeError,
    ShapeError,
    StateError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "DepthError",
    "DivergenceError",
    "FormatError",
    "GridcastError",
    "RangeError",
    "ShapeError",
    "StateError",
    "__version__",
]
