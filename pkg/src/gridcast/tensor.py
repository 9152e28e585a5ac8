"""Dense float64 array helpers shared by every other module.

All numeric state in this package travels as C-contiguous float64 numpy
arrays. Axis order is documented at each producer: spatial grids are
indexed [row, col], input volumes [row, col, depth], channelled feature
maps [row, col, channel]. There is no implicit broadcasting in these
helpers; shape changes are explicit reshapes at the call site.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, ShapeError

Tensor = np.ndarray

_ELEMENTWISE = {"add": np.add, "sub": np.subtract, "mul": np.multiply}


def tensor(values, shape: Sequence[int] | None = None) -> Tensor:
    """Materialize values as a C-contiguous float64 array.

    If shape is given the flat data is reshaped to it; the element count
    must match exactly (no broadcasting).
    """
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if arr.size != int(np.prod(shape)):
            raise ShapeError(
                f"cannot shape {arr.size} values into {shape}"
            )
        arr = arr.reshape(shape)
    return arr


def zeros(shape: Iterable[int]) -> Tensor:
    """All-zero tensor. Every extent must be at least 1."""
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0 or any(s < 1 for s in shape):
        raise ShapeError(f"extents must all be >= 1, got {shape}")
    return np.zeros(shape, dtype=np.float64)


def elementwise(a: Tensor, b: Tensor, op: str) -> Tensor:
    """Entry-by-entry combination of two tensors of identical shape."""
    fn = _ELEMENTWISE.get(op)
    if fn is None:
        raise ConfigError(f"unknown elementwise op {op!r}")
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return fn(a, b)


def reduce(a: Tensor, op: str) -> float:
    """Scalar reduction over all entries.

    Always reduces the flat row-major view, so the summation grouping
    depends only on the element count: reshapes of the same flat data
    reduce to bit-identical results.
    """
    if a.size == 0:
        raise ShapeError("cannot reduce an empty tensor")
    flat = np.ascontiguousarray(a, dtype=np.float64).ravel()
    if op == "sum":
        return float(np.sum(flat))
    if op == "mean":
        return float(np.sum(flat) / flat.size)
    if op == "sumsq":
        return float(np.sum(flat * flat))
    raise ConfigError(f"unknown reduce op {op!r}")


def format_value(x) -> str:
    """Shortest decimal that round-trips the float64 value (Python repr).

    Every text artifact (cube files, reports) formats numbers through
    this, which is what makes emitted files byte-stable across runs and
    platforms.
    """
    return repr(float(x))


def require_shape(a: Tensor, shape: tuple[int, ...], what: str) -> None:
    if tuple(a.shape) != shape:
        raise ShapeError(f"{what}: expected shape {shape}, got {tuple(a.shape)}")


def require_finite(a: Tensor, what: str) -> None:
    if not np.all(np.isfinite(a)):
        raise ShapeError(f"{what}: non-finite values present")
