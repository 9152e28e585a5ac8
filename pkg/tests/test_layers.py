import numpy as np
import numpy.testing as npt
import pytest

from gridcast.errors import ConfigError, DepthError, ShapeError, StateError
from gridcast.layers import (
    Conv2D,
    Conv3D,
    Dense,
    Flatten,
    GridReshape,
    LocallyConnected2D,
    MergeDepth,
    SqueezeChannels,
    relu,
)

from gradcheck import check_layer_gradients, max_relative_error, numeric_grad

TOL = 1e-4


def _ready(layer, seed):
    layer.init_params(np.random.default_rng(seed))
    return layer


class TestGradients:
    """Central-difference checks of every parametric layer, both
    activations, a few seeds each."""

    @pytest.mark.parametrize("seed", [0, 1, 2])
    @pytest.mark.parametrize("activation", ["relu", "linear"])
    def test_conv3d(self, seed, activation):
        rng = np.random.default_rng([seed, 10])
        layer = _ready(Conv3D(2, 2, 2, activation), seed)
        x = rng.normal(size=(3, 3, 4, 2))
        probe = rng.normal(size=(3, 3, 3, 2))
        assert check_layer_gradients(layer, x, probe) <= TOL

    @pytest.mark.parametrize("seed", [0, 1, 2])
    @pytest.mark.parametrize("activation", ["relu", "linear"])
    def test_conv2d(self, seed, activation):
        rng = np.random.default_rng([seed, 11])
        layer = _ready(Conv2D(2, 3, activation), seed)
        x = rng.normal(size=(3, 4, 2))
        probe = rng.normal(size=(3, 4, 3))
        assert check_layer_gradients(layer, x, probe) <= TOL

    @pytest.mark.parametrize("seed", [0, 1, 2])
    @pytest.mark.parametrize("activation", ["relu", "linear"])
    def test_lc2d(self, seed, activation):
        rng = np.random.default_rng([seed, 12])
        layer = _ready(LocallyConnected2D(3, 3, 2, 2, activation), seed)
        x = rng.normal(size=(3, 3, 2))
        probe = rng.normal(size=(3, 3, 2))
        assert check_layer_gradients(layer, x, probe) <= TOL

    @pytest.mark.parametrize("seed", [0, 1, 2])
    @pytest.mark.parametrize("activation", ["relu", "linear"])
    def test_dense(self, seed, activation):
        rng = np.random.default_rng([seed, 13])
        layer = _ready(Dense(5, 4, activation), seed)
        x = rng.normal(size=5)
        probe = rng.normal(size=4)
        assert check_layer_gradients(layer, x, probe) <= TOL

    def test_bridge_layers_pass_gradients_through(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 3, 1, 4))
        g = rng.normal(size=(2, 3, 4))
        back = MergeDepth().grad(x, None, g)
        npt.assert_array_equal(back, g.reshape(2, 3, 1, 4))

        x = rng.normal(size=(2, 3, 1))
        g = rng.normal(size=(2, 3))
        npt.assert_array_equal(SqueezeChannels().grad(x, None, g),
                               g.reshape(2, 3, 1))

        x = rng.normal(size=(2, 3, 4))
        g = rng.normal(size=24)
        npt.assert_array_equal(Flatten().grad(x, None, g), g.reshape(2, 3, 4))

        x = rng.normal(size=6)
        g = rng.normal(size=(2, 3))
        npt.assert_array_equal(GridReshape(2, 3).grad(x, None, g), g.ravel())


class TestReluBehaviour:
    def test_relu_helper(self):
        npt.assert_array_equal(relu(np.array([-2.0, 0.0, 3.0])),
                               [0.0, 0.0, 3.0])

    def test_negative_preactivations_clamp_to_zero(self):
        layer = Dense(2, 3, activation="relu")
        layer.weights = np.zeros((2, 3))
        layer.bias = np.array([-1.0, 0.0, 2.0])
        out = layer.apply(np.array([5.0, -5.0]))
        npt.assert_array_equal(out, [0.0, 0.0, 2.0])

    def test_gradient_blocked_where_output_is_zero(self):
        layer = Dense(2, 2, activation="relu")
        layer.weights = np.array([[1.0, 1.0], [0.0, 0.0]])
        layer.bias = np.array([-10.0, 0.0])
        x = np.array([1.0, 1.0])
        out = layer.apply(x)
        npt.assert_array_equal(out, [0.0, 1.0])
        gx, gw, gb = layer.grad(x, out, np.ones(2))
        # first unit is clamped; nothing may flow through it
        npt.assert_array_equal(gb, [0.0, 1.0])
        npt.assert_array_equal(gw[:, 0], [0.0, 0.0])
        npt.assert_array_equal(gx, [1.0, 0.0])


class TestConv3DMatchesDense:
    """On a 1x1 spatial grid only the center tap sees data, so a depth-k
    volume convolution collapses to a dense map over the flattened window."""

    def test_forward_and_gradients_agree(self):
        rng = np.random.default_rng(7)
        kd, cin, cout = 4, 2, 3
        conv = _ready(Conv3D(kd, cin, cout, activation="relu"), 7)
        dense = Dense(kd * cin, cout, activation="relu")
        dense.weights = conv.weights[1, 1].reshape(kd * cin, cout).copy()
        dense.bias = conv.bias.copy()

        x = rng.normal(size=(1, 1, kd, cin))
        out_c = conv.apply(x)
        out_d = dense.apply(x.reshape(kd * cin))
        npt.assert_allclose(out_c.reshape(cout), out_d, atol=1e-12)

        probe = rng.normal(size=out_c.shape)
        gx_c, gw_c, gb_c = conv.grad(x, out_c, probe)
        gx_d, gw_d, gb_d = dense.grad(x.reshape(kd * cin), out_d,
                                      probe.reshape(cout))
        npt.assert_allclose(gx_c.reshape(kd * cin), gx_d, atol=1e-12)
        npt.assert_allclose(gw_c[1, 1].reshape(kd * cin, cout), gw_d, atol=1e-12)
        npt.assert_allclose(gb_c, gb_d, atol=1e-12)
        # off-center taps only ever saw padding zeros
        mask = np.ones((3, 3), dtype=bool)
        mask[1, 1] = False
        assert np.all(gw_c[mask] == 0.0)


class TestInitialization:
    def test_uniform_bound_tracks_fan_in(self):
        layer = _ready(Conv2D(4, 8), 0)
        bound = np.sqrt(6.0 / (3 * 3 * 4))
        assert np.max(np.abs(layer.weights)) <= bound
        # with 288 draws the sample should come close to the bound
        assert np.max(np.abs(layer.weights)) > 0.9 * bound
        npt.assert_array_equal(layer.bias, np.zeros(8))

    def test_same_seed_same_parameters(self):
        a = _ready(Dense(6, 5), 42)
        b = _ready(Dense(6, 5), 42)
        npt.assert_array_equal(a.weights, b.weights)

    def test_param_count(self):
        conv = _ready(Conv3D(3, 2, 5), 0)
        assert conv.param_count() == 3 * 3 * 3 * 2 * 5 + 5
        lc = _ready(LocallyConnected2D(4, 6, 2, 3), 0)
        # per-location filters and per-location biases
        assert lc.param_count() == 4 * 6 * 3 * 3 * 2 * 3 + 4 * 6 * 3


class TestStatefulInterface:
    def test_forward_caches_then_backward(self):
        rng = np.random.default_rng(5)
        layer = _ready(Conv2D(2, 2), 5)
        x = rng.normal(size=(4, 4, 2))
        out = layer.forward(x)
        probe = rng.normal(size=out.shape)
        stateful = layer.backward(probe)
        pure = layer.grad(x, out, probe)
        for a, b in zip(stateful, pure):
            npt.assert_array_equal(a, b)

    def test_backward_before_forward_raises(self):
        layer = _ready(Conv2D(2, 2), 0)
        with pytest.raises(StateError):
            layer.backward(np.zeros((4, 4, 2)))

    def test_apply_before_init_raises(self):
        with pytest.raises(StateError):
            Conv2D(2, 2).apply(np.zeros((4, 4, 2)))


class TestErrorPaths:
    def test_unknown_activation(self):
        with pytest.raises(ConfigError):
            Dense(2, 2, activation="tanh")

    def test_conv3d_kernel_depth_must_be_positive(self):
        with pytest.raises(DepthError):
            Conv3D(0, 1, 1)

    def test_conv3d_depth_shorter_than_kernel(self):
        layer = _ready(Conv3D(5, 1, 1), 0)
        with pytest.raises(DepthError):
            layer.apply(np.zeros((2, 2, 4, 1)))

    def test_conv3d_wrong_channels(self):
        layer = _ready(Conv3D(2, 3, 1), 0)
        with pytest.raises(ShapeError):
            layer.apply(np.zeros((2, 2, 4, 2)))

    def test_conv2d_wrong_channels(self):
        layer = _ready(Conv2D(3, 1), 0)
        with pytest.raises(ShapeError):
            layer.apply(np.zeros((2, 2, 2)))

    def test_lc2d_wrong_spatial_extent(self):
        layer = _ready(LocallyConnected2D(3, 3, 1, 1), 0)
        with pytest.raises(ShapeError):
            layer.apply(np.zeros((4, 3, 1)))

    def test_dense_wrong_fan_in(self):
        layer = _ready(Dense(4, 2), 0)
        with pytest.raises(ShapeError):
            layer.apply(np.zeros(5))

    def test_grad_shape_mismatch(self):
        rng = np.random.default_rng(0)
        layer = _ready(Conv2D(1, 1), 0)
        x = rng.normal(size=(3, 3, 1))
        out = layer.apply(x)
        with pytest.raises(ShapeError):
            layer.grad(x, out, np.zeros((2, 3, 1)))

    def test_merge_depth_requires_depth_one(self):
        with pytest.raises(ShapeError):
            MergeDepth().apply(np.zeros((2, 2, 3, 1)))

    def test_squeeze_requires_single_channel(self):
        with pytest.raises(ShapeError):
            SqueezeChannels().apply(np.zeros((2, 2, 2)))

    def test_grid_reshape_length_check(self):
        with pytest.raises(ShapeError):
            GridReshape(2, 3).apply(np.zeros(7))

    def test_rank_mismatch(self):
        with pytest.raises(ShapeError):
            Flatten().apply(np.zeros((2, 2)))


class TestNumericHelpers:
    """The checker itself has to be trustworthy before the layer checks
    mean anything."""

    def test_numeric_grad_on_quadratic(self):
        x = np.array([1.0, -2.0, 0.5])
        probe = np.array([1.0])
        grad = numeric_grad(lambda: np.array([np.sum(x ** 2)]), x, probe)
        npt.assert_allclose(grad, 2 * x, atol=1e-8)

    def test_max_relative_error_scales(self):
        assert max_relative_error([1000.0], [1001.0]) == pytest.approx(1 / 1001)
        assert max_relative_error([0.0], [1e-6]) == pytest.approx(1e-6)
