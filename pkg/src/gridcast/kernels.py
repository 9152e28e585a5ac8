"""Backend selection for the layer kernels.

Three interchangeable implementations exist:

  cython     compiled extension, used when importable (the default)
  numpy      vectorized fallback, always available
  reference  direct loops, for tests and oracles only

Selection happens once at import. Set GRIDCAST_KERNELS=cython|numpy|
reference|auto to override; asking for "cython" when the extension did
not build is an error rather than a silent downgrade.
"""

from __future__ import annotations

import os

from . import _kernels_np
from . import _kernels_ref
from .errors import ConfigError

try:
    from . import _kernels_cy
except ImportError:
    _kernels_cy = None


def _select(choice: str):
    if choice == "auto":
        return _kernels_cy if _kernels_cy is not None else _kernels_np
    if choice == "cython":
        if _kernels_cy is None:
            raise ConfigError("kernel backend 'cython' requested but the extension is not built")
        return _kernels_cy
    if choice == "numpy":
        return _kernels_np
    if choice == "reference":
        return _kernels_ref
    raise ConfigError(f"unknown kernel backend {choice!r}")


_impl = _select(os.environ.get("GRIDCAST_KERNELS", "auto"))

BACKEND: str = _impl.NAME

conv3d_forward = _impl.conv3d_forward
conv3d_backward = _impl.conv3d_backward
conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
lc2d_forward = _impl.lc2d_forward
lc2d_backward = _impl.lc2d_backward
dense_forward = _impl.dense_forward
dense_backward = _impl.dense_backward


def backends() -> dict[str, object]:
    """Importable backends by name, for equivalence tests and benchmarks."""
    found: dict[str, object] = {"reference": _kernels_ref, "numpy": _kernels_np}
    if _kernels_cy is not None:
        found["cython"] = _kernels_cy
    return found
