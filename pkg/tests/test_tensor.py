import numpy as np
import numpy.testing as npt
import pytest

from gridcast import tensor
from gridcast.errors import ConfigError, ShapeError


class TestTensor:
    def test_materializes_float64_contiguous(self):
        a = tensor.tensor([[1, 2], [3, 4]])
        assert a.dtype == np.float64
        assert a.flags["C_CONTIGUOUS"]
        npt.assert_array_equal(a, [[1.0, 2.0], [3.0, 4.0]])

    def test_reshape_exact_count(self):
        a = tensor.tensor([1, 2, 3, 4, 5, 6], shape=(2, 3))
        assert a.shape == (2, 3)

    def test_reshape_count_mismatch(self):
        with pytest.raises(ShapeError):
            tensor.tensor([1, 2, 3], shape=(2, 2))

    def test_zeros(self):
        z = tensor.zeros((2, 4))
        assert z.shape == (2, 4)
        assert not z.any()

    def test_zeros_rejects_bad_extents(self):
        with pytest.raises(ShapeError):
            tensor.zeros((3, 0))
        with pytest.raises(ShapeError):
            tensor.zeros(())


class TestElementwise:
    def test_ops(self):
        a = tensor.tensor([1.0, 2.0])
        b = tensor.tensor([3.0, 5.0])
        npt.assert_array_equal(tensor.elementwise(a, b, "add"), [4.0, 7.0])
        npt.assert_array_equal(tensor.elementwise(a, b, "sub"), [-2.0, -3.0])
        npt.assert_array_equal(tensor.elementwise(a, b, "mul"), [3.0, 10.0])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            tensor.elementwise(tensor.zeros((2,)), tensor.zeros((3,)), "add")

    def test_unknown_op(self):
        with pytest.raises(ConfigError):
            tensor.elementwise(tensor.zeros((2,)), tensor.zeros((2,)), "div")


class TestReduce:
    def test_sum_mean_sumsq(self):
        a = tensor.tensor([1.0, 2.0, 3.0, 4.0])
        assert tensor.reduce(a, "sum") == 10.0
        assert tensor.reduce(a, "mean") == 2.5
        assert tensor.reduce(a, "sumsq") == 30.0

    def test_reduce_is_reshape_invariant(self):
        # reductions run over the flat view, so any reshape of the same
        # data reduces bit-identically
        rng = np.random.default_rng(7)
        flat = rng.normal(size=24)
        for shape in [(24,), (4, 6), (2, 3, 4), (2, 2, 2, 3)]:
            for op in ("sum", "mean", "sumsq"):
                assert tensor.reduce(flat.reshape(shape), op) == tensor.reduce(flat, op)

    def test_empty_rejected(self):
        with pytest.raises(ShapeError):
            tensor.reduce(np.zeros((0,)), "sum")

    def test_unknown_op(self):
        with pytest.raises(ConfigError):
            tensor.reduce(tensor.zeros((2,)), "max")


class TestFormatValue:
    def test_round_trips(self):
        for v in [0.0, 1.0, -3.5, 0.1, 1e-9, 123456.789, 2.0 / 3.0]:
            assert float(tensor.format_value(v)) == v

    def test_shortest_repr(self):
        assert tensor.format_value(0.1) == "0.1"
        assert tensor.format_value(3.0) == "3.0"


class TestRequire:
    def test_require_shape(self):
        tensor.require_shape(tensor.zeros((2, 3)), (2, 3), "x")
        with pytest.raises(ShapeError):
            tensor.require_shape(tensor.zeros((2, 3)), (3, 2), "x")

    def test_require_finite(self):
        tensor.require_finite(tensor.tensor([1.0, 2.0]), "x")
        with pytest.raises(ShapeError):
            tensor.require_finite(tensor.tensor([1.0, np.inf]), "x")
