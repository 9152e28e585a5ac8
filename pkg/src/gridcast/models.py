"""Model assembly: the locally connected spatiotemporal network, its
ablation variants, per-region baselines, and checkpoint serialization.

A ModelGraph is an ordered layer list with a fixed input contract
(rows, cols, t_depth). Variants:

  lc_st_fcn        4 conv3d (depths 3,5,7,8) -> depth merge -> 4 conv2d
                   -> 2 locally connected layers, last one linear with a
                   single channel
  lc_st_fcn_diff   same graph, fed seasonally+first differenced input
  lc_fcn           the 3D stack replaced by a conv2d that takes the
                   t_depth slices as input channels, then as lc_st_fcn
  fcn              lc_fcn with the two locally connected layers swapped
                   for shared-weight conv2d
  cnn              fcn trunk, head replaced by flatten -> dense ->
                   dense -> grid reshape (spatial coordinates lost)

All variants except cnn are fully convolutional: every layer preserves
the rows x cols extent. The final activation is linear everywhere;
predictions are clamped to >= 0 only when reported (predict_cube).
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ConfigError, DepthError, FormatError, RangeError, ShapeError
from .layers import (
    Conv2D,
    Conv3D,
    Dense,
    Flatten,
    GridReshape,
    LocallyConnected2D,
    MergeDepth,
    SqueezeChannels,
)

VARIANTS = ("lc_st_fcn", "lc_fcn", "fcn", "cnn", "lc_st_fcn_diff")

GRAPH_DEFAULTS = {
    "rows": 16,
    "cols": 16,
    "t_depth": 20,
    "filters": 32,
    "lc_channels": 16,
    "dense_hidden": 256,
    "kernel_depths": (3, 5, 7, 8),
}

_LAYER_KINDS = {
    cls.kind: cls
    for cls in (Conv3D, Conv2D, LocallyConnected2D, Dense, MergeDepth,
                SqueezeChannels, Flatten, GridReshape)
}


class ModelGraph:
    """Sequential layer stack mapping an input volume to a demand matrix."""

    def __init__(self, name: str, layers: list, rows: int, cols: int,
                 t_depth: int, input_kind: str) -> None:
        self.name = name
        self.layers = list(layers)
        self.rows = rows
        self.cols = cols
        self.t_depth = t_depth
        self.input_kind = input_kind  # "volume" (adds a channel axis) or "map"

    @property
    def input_spec(self) -> tuple[int, int, int]:
        return (self.rows, self.cols, self.t_depth)

    @property
    def output_spec(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def init_params(self, seed: int) -> None:
        """Draw every parameter from one seeded generator, in layer order."""
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            if layer.has_params:
                layer.init_params(rng)

    def _prepare(self, x) -> np.ndarray:
        a = np.ascontiguousarray(x, dtype=np.float64)
        if a.shape != self.input_spec:
            raise ShapeError(f"expected input {self.input_spec}, got {a.shape}")
        if self.input_kind == "volume":
            return a[:, :, :, np.newaxis]
        return a

    def forward(self, x) -> np.ndarray:
        a = self._prepare(x)
        for layer in self.layers:
            a = layer.apply(a)
        return a

    def forward_with_caches(self, x):
        """Forward pass keeping (input, output) per layer for backward.

        Pure: touches no layer state, so concurrent calls on different
        samples are safe against one shared parameter set.
        """
        a = self._prepare(x)
        caches = []
        for layer in self.layers:
            out = layer.apply(a)
            caches.append((a, out))
            a = out
        return a, caches

    def backward(self, caches, grad_out):
        """Walk the graph in reverse. Returns (grad_input, per-layer grads),
        where the per-layer entry is (grad_weights, grad_bias) or None for
        parameterless bridges."""
        grads: list = [None] * len(self.layers)
        g = grad_out
        for idx in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[idx]
            x, out = caches[idx]
            if layer.has_params:
                g, gw, gb = layer.grad(x, out, g)
                grads[idx] = (gw, gb)
            else:
                g = layer.grad(x, out, g)
        return g, grads

    def parameters(self):
        """(layer_index, name, array) in a fixed order; arrays are the live
        parameter buffers, so in-place updates train the model."""
        out = []
        for idx, layer in enumerate(self.layers):
            if layer.has_params:
                out.append((idx, "weights", layer.weights))
                out.append((idx, "bias", layer.bias))
        return out

    def param_count(self) -> int:
        return sum(arr.size for _, _, arr in self.parameters())

    def get_state(self):
        return [arr.copy() for _, _, arr in self.parameters()]

    def set_state(self, state) -> None:
        params = self.parameters()
        if len(state) != len(params):
            raise ShapeError(f"state has {len(state)} arrays, model has {len(params)}")
        for (_, _, arr), saved in zip(params, state):
            if arr.shape != saved.shape:
                raise ShapeError(f"state shape {saved.shape} != parameter {arr.shape}")
            arr[...] = saved


def _conv3d_stack(t_depth, kernel_depths, filters):
    layers = []
    depth = t_depth
    in_ch = 1
    for kd in kernel_depths:
        if depth < kd:
            raise DepthError(
                f"kernel depth {kd} exceeds remaining temporal depth {depth} "
                f"(t_depth {t_depth} too small for chain {tuple(kernel_depths)})")
        layers.append(Conv3D(kd, in_ch, filters))
        depth = depth - kd + 1
        in_ch = filters
    if depth != 1:
        raise DepthError(
            f"depth chain {tuple(kernel_depths)} on t_depth {t_depth} ends at "
            f"depth {depth}; the depth-to-channel merge needs exactly 1")
    return layers


def build_variant(name: str, config: dict | None = None) -> ModelGraph:
    """Assemble one of the named architectures.

    config keys (all optional): rows, cols, t_depth, filters, lc_channels,
    dense_hidden, kernel_depths. Unknown keys are rejected.
    """
    if name not in VARIANTS:
        raise ConfigError(f"unknown variant {name!r}; expected one of {', '.join(VARIANTS)}")
    cfg = dict(GRAPH_DEFAULTS)
    if config:
        unknown = sorted(set(config) - set(cfg))
        if unknown:
            raise ConfigError(f"unknown model config keys: {', '.join(unknown)}")
        cfg.update(config)
    rows, cols, td = cfg["rows"], cfg["cols"], cfg["t_depth"]
    filters, lc_ch = cfg["filters"], cfg["lc_channels"]
    for key in ("rows", "cols", "t_depth", "filters", "lc_channels", "dense_hidden"):
        if int(cfg[key]) < 1:
            raise ConfigError(f"model config {key} must be >= 1, got {cfg[key]}")

    layers: list
    if name in ("lc_st_fcn", "lc_st_fcn_diff"):
        layers = _conv3d_stack(td, cfg["kernel_depths"], filters)
        layers.append(MergeDepth())
        layers += [Conv2D(filters, filters) for _ in range(4)]
        layers.append(LocallyConnected2D(rows, cols, filters, lc_ch))
        layers.append(LocallyConnected2D(rows, cols, lc_ch, 1, activation="linear"))
        layers.append(SqueezeChannels())
        kind = "volume"
    elif name == "lc_fcn":
        layers = [Conv2D(td, filters)]
        layers += [Conv2D(filters, filters) for _ in range(3)]
        layers.append(LocallyConnected2D(rows, cols, filters, lc_ch))
        layers.append(LocallyConnected2D(rows, cols, lc_ch, 1, activation="linear"))
        layers.append(SqueezeChannels())
        kind = "map"
    elif name == "fcn":
        layers = [Conv2D(td, filters)]
        layers += [Conv2D(filters, filters) for _ in range(3)]
        layers.append(Conv2D(filters, lc_ch))
        layers.append(Conv2D(lc_ch, 1, activation="linear"))
        layers.append(SqueezeChannels())
        kind = "map"
    else:  # cnn
        layers = [Conv2D(td, filters)]
        layers += [Conv2D(filters, filters) for _ in range(3)]
        layers.append(Flatten())
        layers.append(Dense(rows * cols * filters, cfg["dense_hidden"], activation="relu"))
        layers.append(Dense(cfg["dense_hidden"], rows * cols, activation="linear"))
        layers.append(GridReshape(rows, cols))
        kind = "map"
    return ModelGraph(name, layers, rows, cols, td, kind)


# --- checkpoint format ------------------------------------------------
#
# magic (8 bytes) | version u32 LE | header length u32 LE | header JSON
# (utf-8) | parameter arrays as raw little-endian float64, in layer
# order, weights before bias. The header carries the variant name, input
# contract, layer specs, and the shape manifest, so load rebuilds the
# exact graph and the byte stream round-trips bit for bit.

CHECKPOINT_MAGIC = b"GCASTMDL"
CHECKPOINT_VERSION = 1


def save_checkpoint(model: ModelGraph) -> bytes:
    header = {
        "variant": model.name,
        "rows": model.rows,
        "cols": model.cols,
        "t_depth": model.t_depth,
        "input_kind": model.input_kind,
        "layers": [{"kind": layer.kind, "config": layer.config()}
                   for layer in model.layers],
        "arrays": [[idx, name, list(arr.shape)]
                   for idx, name, arr in model.parameters()],
    }
    blob = json.dumps(header, separators=(",", ":")).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(blob)), blob]
    for _, _, arr in model.parameters():
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def load_checkpoint(data: bytes) -> ModelGraph:
    if len(data) < len(CHECKPOINT_MAGIC) + 8:
        raise FormatError("checkpoint truncated before header")
    if data[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise FormatError("not a model checkpoint (bad magic)")
    off = len(CHECKPOINT_MAGIC)
    version, hlen = struct.unpack_from("<II", data, off)
    off += 8
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    if len(data) < off + hlen:
        raise FormatError("checkpoint truncated inside header")
    try:
        header = json.loads(data[off:off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint header: {exc}") from exc
    off += hlen

    try:
        layers = []
        for spec in header["layers"]:
            cls = _LAYER_KINDS.get(spec["kind"])
            if cls is None:
                raise FormatError(f"unknown layer kind {spec['kind']!r}")
            layers.append(cls(**spec["config"]))
        model = ModelGraph(header["variant"], layers, header["rows"],
                           header["cols"], header["t_depth"], header["input_kind"])
        manifest = header["arrays"]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"incomplete checkpoint header: {exc}") from exc

    for idx, name, shape in manifest:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if len(data) < off + nbytes:
            raise FormatError(f"checkpoint truncated inside array {name} of layer {idx}")
        arr = np.frombuffer(data[off:off + nbytes], dtype="<f8").reshape(shape).copy()
        off += nbytes
        layer = model.layers[idx]
        if not layer.has_params:
            raise FormatError(f"array assigned to parameterless layer {idx}")
        setattr(layer, name, arr)
    if off != len(data):
        raise FormatError(f"{len(data) - off} trailing bytes after parameter arrays")
    return model


def write_checkpoint(model: ModelGraph, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(save_checkpoint(model))


def read_checkpoint(path: str) -> ModelGraph:
    with open(path, "rb") as fh:
        return load_checkpoint(fh.read())


# --- per-region baselines ---------------------------------------------


class RegionModel:
    """Classical single-region predictor: a tiny dense network over the
    same stacked time window, or an additive trend+period model.

    kind "ann": dense(t_depth -> hidden, relu) -> dense(hidden -> 1).
    kind "additive": linear trend extrapolation plus the periodic profile
    from the moving-average decomposition.
    """

    def __init__(self, region: tuple[int, int], kind: str) -> None:
        if kind not in ("ann", "additive"):
            raise ConfigError(f"unknown region model kind {kind!r}")
        self.region = tuple(region)
        self.kind = kind
        # ann state
        self.hidden: Dense | None = None
        self.output: Dense | None = None
        # additive state
        self.period: int | None = None
        self.t_start = 0
        self.slope = 0.0
        self.intercept = 0.0
        self.profile: np.ndarray | None = None

    # -- ann -----------------------------------------------------------

    def fit_ann(self, inputs, targets, hidden_units: int = 16, lr: float = 0.01,
                eps: float = 1e-8, epochs: int = 100, batch_size: int = 32,
                seed: int = 0) -> float:
        """Minibatch Adagrad on MSE. Returns the final epoch's mean loss."""
        from .training import adagrad_step

        x = np.ascontiguousarray(inputs, dtype=np.float64)
        y = np.ascontiguousarray(targets, dtype=np.float64).ravel()
        if x.ndim != 2 or x.shape[0] != y.shape[0]:
            raise ShapeError(f"inputs {x.shape} do not pair with targets {y.shape}")
        if x.shape[0] == 0:
            raise RangeError("cannot fit a region model on zero samples")
        self.hidden = Dense(x.shape[1], hidden_units, activation="relu")
        self.output = Dense(hidden_units, 1, activation="linear")
        rng = np.random.default_rng(seed)
        self.hidden.init_params(rng)
        self.output.init_params(rng)
        params = [self.hidden.weights, self.hidden.bias,
                  self.output.weights, self.output.bias]
        state = [np.zeros_like(p) for p in params]
        n = x.shape[0]
        last = 0.0
        for _ in range(epochs):
            order = rng.permutation(n)
            total = 0.0
            for lo in range(0, n, batch_size):
                batch = order[lo:lo + batch_size]
                grads = [np.zeros_like(p) for p in params]
                for i in batch:
                    h = self.hidden.apply(x[i])
                    out = self.output.apply(h)
                    err = out[0] - y[i]
                    total += err * err
                    gh, gw2, gb2 = self.output.grad(h, out, np.array([2.0 * err]))
                    _, gw1, gb1 = self.hidden.grad(x[i], h, gh)
                    for acc, g in zip(grads, (gw1, gb1, gw2, gb2)):
                        acc += g
                scale = 1.0 / len(batch)
                adagrad_step(params, [g * scale for g in grads], state, lr, eps)
            last = total / n
        return last

    def predict_ann(self, window) -> float:
        if self.hidden is None or self.output is None:
            raise RangeError("region model not fitted")
        h = self.hidden.apply(window)
        return float(self.output.apply(h)[0])

    # -- additive ------------------------------------------------------

    def fit_additive(self, series, period: int, t_start: int = 0) -> None:
        """Decompose the training series and keep what prediction needs:
        a least-squares line through the trend and the periodic profile
        indexed by absolute phase."""
        from .datapipe import decompose

        dec = decompose(series, period)
        self.period = period
        self.t_start = int(t_start)
        valid = ~np.isnan(dec.trend)
        t_axis = self.t_start + np.nonzero(valid)[0]
        self.slope, self.intercept = np.polyfit(t_axis, dec.trend[valid], 1)
        # profile by absolute phase: series position k sits at absolute
        # time t_start + k
        profile = np.empty(period)
        for phase in range(period):
            profile[(self.t_start + phase) % period] = dec.periodic[phase]
        self.profile = profile

    def predict_additive(self, t: int) -> float:
        if self.profile is None or self.period is None:
            raise RangeError("region model not fitted")
        if t < self.t_start:
            raise RangeError(f"time index {t} precedes the training window "
                             f"starting at {self.t_start}")
        return float(self.slope * t + self.intercept + self.profile[t % self.period])


# --- prediction over a cube -------------------------------------------


def predict_cube(model: ModelGraph, cube, t_lo: int, t_hi: int,
                 t_recent: int, t_period: int, period: int):
    """One-step-ahead predictions for every index in [t_lo, t_hi) with
    enough history. Returns (time indices, predictions [n, rows, cols]).

    The differenced variant runs on the transformed cube and maps each
    predicted difference back to demand scale through the true history.
    Reported predictions are clamped to >= 0 here and only here.
    """
    from .datapipe import difference_transform, volume_input

    if t_recent != model.t_depth - t_period:
        raise ConfigError(
            f"t_recent {t_recent} + t_period {t_period} must equal the model's "
            f"input depth {model.t_depth}")
    counts = cube.counts
    total = counts.shape[2]
    invert = None
    if model.name == "lc_st_fcn_diff":
        source, invert = difference_transform(cube, period)
        earliest = max(period + 1 + t_recent, 2 * period + 1 + t_period)
    else:
        source = counts
        earliest = max(t_recent, period + t_period)
    ts = [t for t in range(max(t_lo, earliest), min(t_hi, total))]
    preds = np.zeros((len(ts), model.rows, model.cols))
    for k, t in enumerate(ts):
        x = volume_input(source, t, t_recent, t_period, period)
        y = model.forward(x)
        if invert is not None:
            y = invert(t, y)
        preds[k] = np.maximum(y, 0.0)
    return np.array(ts, dtype=np.int64), preds
