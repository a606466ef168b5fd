import numpy as np
import pytest

import oracles
from vcnet.tensor import (
    Graph,
    ShapeError,
    Tensor,
    absolute,
    backward,
    relu,
    reflect_index,
    square,
    tsum,
    upsample_bilinear,
    window_covariance,
    window_mean,
    window_variance,
    zero_grad,
)


def _grad(fn, *leaves):
    for t in leaves:
        t.requires_grad = True
        t.grad = None
    backward(fn())
    return [t.grad for t in leaves]


class TestElementwise:
    def test_product_rule(self, rng):
        a, b = Tensor(rng.standard_normal(5)), Tensor(rng.standard_normal(5))
        ga, gb = _grad(lambda: tsum(a * b), a, b)
        np.testing.assert_array_equal(ga, b.data)
        np.testing.assert_array_equal(gb, a.data)

    def test_quotient_rule(self, rng):
        a, b = Tensor(rng.uniform(1, 2, 4)), Tensor(rng.uniform(1, 2, 4))
        ga, gb = _grad(lambda: tsum(a / b), a, b)
        np.testing.assert_allclose(ga, 1 / b.data)
        np.testing.assert_allclose(gb, -a.data / b.data**2)

    def test_scalar_operand_gradient_is_summed(self, rng):
        a = Tensor(rng.standard_normal((3, 3)))
        s = Tensor(np.array(2.0))
        (gs,) = _grad(lambda: tsum(a * s), s)
        assert gs.shape == ()
        assert gs == pytest.approx(a.data.sum())

    def test_python_scalars(self):
        a = Tensor(np.array([1.0, 2.0]))
        np.testing.assert_array_equal((1.0 - a).data, [0.0, -1.0])
        np.testing.assert_array_equal((2.0 / a).data, [2.0, 1.0])

    def test_mismatched_shapes_raise(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 3))) + Tensor(np.zeros((3, 2)))

    def test_relu_forward_and_mask(self):
        x = Tensor(np.array([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(relu(x).data, [0.0, 0.0, 2.0])
        (g,) = _grad(lambda: tsum(relu(x)), x)
        np.testing.assert_array_equal(g, [0.0, 0.0, 1.0])

    def test_relu_keeps_dtype(self):
        x = Tensor(np.array([-1.0, 1.0], dtype=np.float32))
        assert relu(x).dtype == np.float32

    def test_abs_and_square(self):
        x = Tensor(np.array([-2.0, 3.0]))
        (g,) = _grad(lambda: tsum(absolute(x)) + tsum(square(x)), x)
        np.testing.assert_array_equal(g, [-1.0 - 4.0, 1.0 + 6.0])


class TestGraph:
    def test_shared_subexpression_accumulates(self):
        x = Tensor(np.array([3.0]))

        def f():
            y = x * x
            return tsum(y * y + y)

        (g,) = _grad(f, x)  # d/dx (x^4 + x^2) = 4x^3 + 2x
        np.testing.assert_allclose(g, [4 * 27 + 6])

    def test_deep_chain_has_no_recursion_limit(self):
        x = Tensor(np.array([1.0]))
        x.requires_grad = True
        y = x
        for _ in range(5000):
            y = y + 0.0
        backward(tsum(y))
        assert x.grad[0] == 1.0
        assert len(Graph(y)) > 5000

    def test_params_mapping_returns_zero_for_unreached(self):
        a, b = Tensor(np.ones(2)), Tensor(np.ones(3))
        a.requires_grad = b.requires_grad = True
        grads = backward(tsum(a * 2.0), {"a": a, "b": b})
        np.testing.assert_array_equal(grads["a"], [2.0, 2.0])
        np.testing.assert_array_equal(grads["b"], np.zeros(3))

    def test_zero_grad(self):
        a = Tensor(np.ones(2))
        a.requires_grad = True
        backward(tsum(a))
        zero_grad([a])
        assert a.grad is None or not np.any(a.grad)


class TestWindowedStatistics:
    def test_reflect_index_matches_oracle(self):
        for n in (1, 2, 5, 16):
            for i in range(-20, 40):
                assert reflect_index(i, n) == oracles.reflect(i, n)

    def test_window_stats_match_direct_loops(self, rng):
        a, b = rng.uniform(0, 1, (11, 9)), rng.uniform(0, 1, (11, 9))
        mu_a, _, var_a, _, cov = oracles.window_stats(a, b, 8)
        np.testing.assert_allclose(window_mean(Tensor(a)).data, mu_a, atol=1e-13)
        np.testing.assert_allclose(window_variance(Tensor(a)).data, var_a, atol=1e-13)
        np.testing.assert_allclose(window_covariance(Tensor(a), Tensor(b)).data, cov, atol=1e-13)

    def test_covariance_with_itself_is_variance(self, rng):
        a = Tensor(rng.uniform(0, 1, (16, 16)))
        np.testing.assert_allclose(window_covariance(a, a).data, window_variance(a).data, atol=1e-15)

    def test_batched_planes_are_independent(self, rng):
        x = rng.uniform(0, 1, (2, 1, 10, 10))
        out = window_mean(Tensor(x)).data
        np.testing.assert_allclose(out[1, 0], window_mean(Tensor(x[1, 0])).data)


class TestBilinear:
    def test_matches_per_sample_oracle(self, rng):
        img = rng.uniform(0, 1, (5, 7))
        np.testing.assert_allclose(upsample_bilinear(Tensor(img)).data, oracles.bilinear_x2(img), atol=1e-14)

    def test_checkerboard(self):
        up = upsample_bilinear(Tensor(np.array([[0.0, 1.0], [1.0, 0.0]]))).data
        expected = np.array([
            [0.0, 0.25, 0.75, 1.0],
            [0.25, 0.375, 0.625, 0.75],
            [0.75, 0.625, 0.375, 0.25],
            [1.0, 0.75, 0.25, 0.0],
        ])
        np.testing.assert_allclose(up, expected, atol=1e-15)

    def test_constant_is_preserved(self):
        np.testing.assert_allclose(upsample_bilinear(Tensor(np.full((4, 6), 0.3))).data, 0.3)
