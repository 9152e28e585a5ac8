"""Network layers: 3D/2D convolution, locally connected 2D, dense, and
the shape bridges between them.

Each layer follows the same protocol. `apply(x)` is the pure forward pass
and `grad(x, out, grad_out)` the pure backward pass; both are free of
side effects so different samples can run on different threads against
one shared layer. `forward`/`backward` wrap them with a single cached
activation for callers that want the conventional stateful interface.
Backward passes recover the ReLU gate from the forward output (entries
that came out 0 were clamped, their gradient is dropped), which is why
`grad` takes `out`.

Parameterized layers expose `weights`/`bias` plus `init_params(rng)`.
Weights draw uniform from [-s, s] with s = sqrt(6 / fan_in); biases
start at zero. Bridges (depth merge, flatten, grid reshape) carry no
parameters and only move axes.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ConfigError, DepthError, ShapeError, StateError

SPATIAL_KERNEL = 3


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def _as_input(x, ndim: int) -> np.ndarray:
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim != ndim:
        raise ShapeError(f"expected a rank-{ndim} input, got rank {a.ndim}")
    return a


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    s = np.sqrt(6.0 / fan_in)
    return rng.uniform(-s, s, size=shape)


class _LayerBase:
    """Shared cache plumbing for the stateful forward/backward interface."""

    has_params = False

    def __init__(self) -> None:
        self._cache: tuple[np.ndarray, np.ndarray] | None = None

    def forward(self, x):
        a = self.apply(x)
        self._cache = (np.ascontiguousarray(x, dtype=np.float64), a)
        return a

    def backward(self, grad_out):
        if self._cache is None:
            raise StateError("backward called before forward; no cached activation")
        x, out = self._cache
        return self.grad(x, out, grad_out)

    def apply(self, x):  # pragma: no cover - overridden
        raise NotImplementedError

    def grad(self, x, out, grad_out):  # pragma: no cover - overridden
        raise NotImplementedError


class _ParamLayer(_LayerBase):
    has_params = True

    def __init__(self) -> None:
        super().__init__()
        self.weights: np.ndarray | None = None
        self.bias: np.ndarray | None = None

    def _require_params(self) -> None:
        if self.weights is None or self.bias is None:
            raise StateError("layer parameters not initialized")

    def param_count(self) -> int:
        self._require_params()
        return self.weights.size + self.bias.size


class Conv3D(_ParamLayer):
    """3x3 spatial convolution over a volume, valid along the depth axis.

    Output depth is t_in - kernel_depth + 1; spatial extent is preserved
    by the one-cell zero ring.
    """

    kind = "conv3d"

    def __init__(self, kernel_depth: int, in_channels: int, out_channels: int,
                 activation: str = "relu") -> None:
        super().__init__()
        if kernel_depth < 1:
            raise DepthError(f"kernel depth must be >= 1, got {kernel_depth}")
        self.kernel_depth = kernel_depth
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.activation = _check_activation(activation)

    def config(self) -> dict:
        return {"kernel_depth": self.kernel_depth, "in_channels": self.in_channels,
                "out_channels": self.out_channels, "activation": self.activation}

    def init_params(self, rng: np.random.Generator) -> None:
        k = SPATIAL_KERNEL
        fan_in = k * k * self.kernel_depth * self.in_channels
        self.weights = _uniform(rng, (k, k, self.kernel_depth, self.in_channels,
                                      self.out_channels), fan_in)
        self.bias = np.zeros(self.out_channels)

    def _check(self, x: np.ndarray) -> None:
        if x.shape[3] != self.in_channels:
            raise ShapeError(f"expected {self.in_channels} input channels, got {x.shape[3]}")
        if x.shape[2] < self.kernel_depth:
            raise DepthError(
                f"kernel depth {self.kernel_depth} exceeds input depth {x.shape[2]}")

    def apply(self, x):
        self._require_params()
        a = _as_input(x, 4)
        self._check(a)
        return kernels.conv3d_forward(a, self.weights, self.bias,
                                      self.activation == "relu")

    def grad(self, x, out, grad_out):
        self._require_params()
        a = _as_input(x, 4)
        self._check(a)
        g = np.ascontiguousarray(grad_out, dtype=np.float64)
        if g.shape != out.shape:
            raise ShapeError(f"grad shape {g.shape} != output shape {out.shape}")
        return kernels.conv3d_backward(a, self.weights, out, g,
                                       self.activation == "relu")


class Conv2D(_ParamLayer):
    """3x3 convolution on a feature map, shared weights, same padding."""

    kind = "conv2d"

    def __init__(self, in_channels: int, out_channels: int,
                 activation: str = "relu") -> None:
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.activation = _check_activation(activation)

    def config(self) -> dict:
        return {"in_channels": self.in_channels, "out_channels": self.out_channels,
                "activation": self.activation}

    def init_params(self, rng: np.random.Generator) -> None:
        k = SPATIAL_KERNEL
        fan_in = k * k * self.in_channels
        self.weights = _uniform(rng, (k, k, self.in_channels, self.out_channels), fan_in)
        self.bias = np.zeros(self.out_channels)

    def _check(self, x: np.ndarray) -> None:
        if x.shape[2] != self.in_channels:
            raise ShapeError(f"expected {self.in_channels} input channels, got {x.shape[2]}")

    def apply(self, x):
        self._require_params()
        a = _as_input(x, 3)
        self._check(a)
        return kernels.conv2d_forward(a, self.weights, self.bias,
                                      self.activation == "relu")

    def grad(self, x, out, grad_out):
        self._require_params()
        a = _as_input(x, 3)
        self._check(a)
        g = np.ascontiguousarray(grad_out, dtype=np.float64)
        if g.shape != out.shape:
            raise ShapeError(f"grad shape {g.shape} != output shape {out.shape}")
        return kernels.conv2d_backward(a, self.weights, out, g,
                                       self.activation == "relu")


class LocallyConnected2D(_ParamLayer):
    """Per-location 3x3 filter bank: no weight sharing across the grid.

    weights[i, j] is the full filter set for output location (i, j), so
    the parameter count scales with rows * cols.
    """

    kind = "lc2d"

    def __init__(self, rows: int, cols: int, in_channels: int, out_channels: int,
                 activation: str = "relu") -> None:
        super().__init__()
        self.rows = rows
        self.cols = cols
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.activation = _check_activation(activation)

    def config(self) -> dict:
        return {"rows": self.rows, "cols": self.cols, "in_channels": self.in_channels,
                "out_channels": self.out_channels, "activation": self.activation}

    def init_params(self, rng: np.random.Generator) -> None:
        k = SPATIAL_KERNEL
        fan_in = k * k * self.in_channels
        self.weights = _uniform(rng, (self.rows, self.cols, k, k, self.in_channels,
                                      self.out_channels), fan_in)
        self.bias = np.zeros((self.rows, self.cols, self.out_channels))

    def _check(self, x: np.ndarray) -> None:
        if x.shape != (self.rows, self.cols, self.in_channels):
            raise ShapeError(
                f"expected input {(self.rows, self.cols, self.in_channels)}, got {x.shape}")

    def apply(self, x):
        self._require_params()
        a = _as_input(x, 3)
        self._check(a)
        return kernels.lc2d_forward(a, self.weights, self.bias,
                                    self.activation == "relu")

    def grad(self, x, out, grad_out):
        self._require_params()
        a = _as_input(x, 3)
        self._check(a)
        g = np.ascontiguousarray(grad_out, dtype=np.float64)
        if g.shape != out.shape:
            raise ShapeError(f"grad shape {g.shape} != output shape {out.shape}")
        return kernels.lc2d_backward(a, self.weights, out, g,
                                     self.activation == "relu")


class Dense(_ParamLayer):
    """Affine map on a flat vector. Spatial coordinates do not survive."""

    kind = "dense"

    def __init__(self, fan_in: int, fan_out: int, activation: str = "linear") -> None:
        super().__init__()
        self.fan_in = fan_in
        self.fan_out = fan_out
        self.activation = _check_activation(activation)

    def config(self) -> dict:
        return {"fan_in": self.fan_in, "fan_out": self.fan_out,
                "activation": self.activation}

    def init_params(self, rng: np.random.Generator) -> None:
        self.weights = _uniform(rng, (self.fan_in, self.fan_out), self.fan_in)
        self.bias = np.zeros(self.fan_out)

    def _check(self, x: np.ndarray) -> None:
        if x.shape[0] != self.fan_in:
            raise ShapeError(f"expected fan-in {self.fan_in}, got {x.shape[0]}")

    def apply(self, x):
        self._require_params()
        a = _as_input(x, 1)
        self._check(a)
        return kernels.dense_forward(a, self.weights, self.bias,
                                     self.activation == "relu")

    def grad(self, x, out, grad_out):
        self._require_params()
        a = _as_input(x, 1)
        self._check(a)
        g = np.ascontiguousarray(grad_out, dtype=np.float64)
        if g.shape != out.shape:
            raise ShapeError(f"grad shape {g.shape} != output shape {out.shape}")
        return kernels.dense_backward(a, self.weights, out, g,
                                      self.activation == "relu")


class MergeDepth(_LayerBase):
    """Drop a depth-1 axis: [rows, cols, 1, ch] becomes [rows, cols, ch]."""

    kind = "merge_depth"

    def config(self) -> dict:
        return {}

    def apply(self, x):
        a = _as_input(x, 4)
        if a.shape[2] != 1:
            raise ShapeError(f"can only merge a depth-1 volume, got depth {a.shape[2]}")
        return np.ascontiguousarray(a[:, :, 0, :])

    def grad(self, x, out, grad_out):
        g = np.ascontiguousarray(grad_out, dtype=np.float64)
        return g[:, :, np.newaxis, :]


class SqueezeChannels(_LayerBase):
    """Drop a single-channel axis: [rows, cols, 1] becomes [rows, cols]."""

    kind = "squeeze_channels"

    def config(self) -> dict:
        return {}

    def apply(self, x):
        a = _as_input(x, 3)
        if a.shape[2] != 1:
            raise ShapeError(f"can only squeeze a single channel, got {a.shape[2]}")
        return np.ascontiguousarray(a[:, :, 0])

    def grad(self, x, out, grad_out):
        g = np.ascontiguousarray(grad_out, dtype=np.float64)
        return g[:, :, np.newaxis]


class Flatten(_LayerBase):
    """[rows, cols, ch] to a flat vector, C order."""

    kind = "flatten"

    def config(self) -> dict:
        return {}

    def apply(self, x):
        a = _as_input(x, 3)
        return a.ravel()

    def grad(self, x, out, grad_out):
        g = np.ascontiguousarray(grad_out, dtype=np.float64)
        a = np.ascontiguousarray(x, dtype=np.float64)
        return g.reshape(a.shape)


class GridReshape(_LayerBase):
    """Flat vector of length rows*cols back to a [rows, cols] matrix."""

    kind = "grid_reshape"

    def __init__(self, rows: int, cols: int) -> None:
        super().__init__()
        self.rows = rows
        self.cols = cols

    def config(self) -> dict:
        return {"rows": self.rows, "cols": self.cols}

    def apply(self, x):
        a = _as_input(x, 1)
        if a.shape[0] != self.rows * self.cols:
            raise ShapeError(
                f"expected length {self.rows * self.cols}, got {a.shape[0]}")
        return a.reshape(self.rows, self.cols)

    def grad(self, x, out, grad_out):
        g = np.ascontiguousarray(grad_out, dtype=np.float64)
        return g.ravel()


def _check_activation(name: str) -> str:
    if name not in ("relu", "linear"):
        raise ConfigError(f"unknown activation {name!r}")
    return name
