import numpy as np
import pytest

from balancelab import numkit
from balancelab.errors import ContractError, NumericError, ShapeError, SpecError
from balancelab.numkit import (
    LayerParams,
    MlpParams,
    finite_diff_check,
    matmul,
    mlp_backward,
    mlp_forward,
    zeros_like_params,
)


def random_mlp(sizes, rng):
    layers = [
        LayerParams(rng.standard_normal((sizes[t + 1], sizes[t])), rng.standard_normal(sizes[t + 1]))
        for t in range(len(sizes) - 1)
    ]
    return MlpParams(layers)


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(matmul(np.eye(2), a), a)

    def test_by_hand(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[1.0], [1.0]])
        assert np.array_equal(matmul(a, b), np.array([[3.0], [7.0]]))

    def test_scalar_case(self):
        assert matmul(np.array([[2.0]]), np.array([[3.0]]))[0, 0] == 6.0

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_associativity(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            p, q, r, s = rng.integers(1, 7, size=4)
            a = rng.standard_normal((p, q))
            b = rng.standard_normal((q, r))
            c = rng.standard_normal((r, s))
            left = matmul(matmul(a, b), c)
            right = matmul(a, matmul(b, c))
            denom = np.maximum(np.abs(right), 1.0)
            assert np.max(np.abs(left - right) / denom) < 1e-9


class TestMlpForward:
    def test_zero_weights_bias_collapse(self):
        bias = np.array([1.5, -2.0])
        params = MlpParams([LayerParams(np.zeros((2, 3)), bias)])
        out, _ = mlp_forward(params, np.random.default_rng(1).standard_normal((5, 3)))
        assert np.array_equal(out, np.tile(bias, (5, 1)))

    def test_identity_layer(self):
        params = MlpParams([LayerParams(np.eye(4), np.zeros(4))])
        x = np.random.default_rng(2).standard_normal((3, 4))
        out, _ = mlp_forward(params, x)
        assert np.array_equal(out, x)

    def test_one_unit_net_rectifies(self):
        # hidden pre-activation is -1, rectified to 0, so output equals the output bias
        params = MlpParams(
            [
                LayerParams(np.array([[1.0]]), np.zeros(1)),
                LayerParams(np.array([[1.0]]), np.array([0.75])),
            ]
        )
        out, cache = mlp_forward(params, np.array([[-1.0]]))
        assert cache.preacts[0][0, 0] == -1.0
        assert out[0, 0] == 0.75

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        params = random_mlp([4, 8, 2], rng)
        x = rng.standard_normal((6, 4))
        a, _ = mlp_forward(params, x)
        b, _ = mlp_forward(params, x)
        assert a.tobytes() == b.tobytes()

    def test_dim_mismatch(self):
        params = MlpParams([LayerParams(np.ones((2, 3)), np.zeros(2))])
        with pytest.raises(ShapeError):
            mlp_forward(params, np.ones((4, 5)))

    def test_layer_chain_checked(self):
        with pytest.raises(ShapeError):
            MlpParams(
                [
                    LayerParams(np.ones((3, 2)), np.zeros(3)),
                    LayerParams(np.ones((2, 4)), np.zeros(2)),
                ]
            )


class TestMlpBackward:
    def test_zero_output_grad(self):
        rng = np.random.default_rng(4)
        params = random_mlp([3, 5, 2], rng)
        out, cache = mlp_forward(params, rng.standard_normal((4, 3)))
        grads, dx = mlp_backward(params, cache, np.zeros_like(out))
        assert not dx.any()
        for layer in grads.layers:
            assert not layer.weight.any() and not layer.bias.any()

    def test_linear_weight_grad_sums_inputs(self):
        # loss = sum(output): dW = ones.T @ x = column sums of the batch
        params = MlpParams([LayerParams(np.full((2, 3), 0.5), np.zeros(2))])
        x = np.arange(12.0).reshape(4, 3)
        out, cache = mlp_forward(params, x)
        grads, _ = mlp_backward(params, cache, np.ones_like(out))
        assert np.array_equal(grads.layers[0].weight, np.tile(x.sum(axis=0), (2, 1)))

    def test_matches_finite_differences(self):
        for seed in range(8):
            rng = np.random.default_rng(seed)
            depth = rng.integers(1, 4)
            sizes = [int(rng.integers(1, 17)) for _ in range(depth + 1)]
            params = random_mlp(sizes, rng)
            x = rng.standard_normal((5, sizes[0]))
            direction = rng.standard_normal((5, sizes[-1]))
            _, cache = mlp_forward(params, x)
            grads, _ = mlp_backward(params, cache, direction)

            def loss(p):
                out, _ = mlp_forward(p, x)
                return float((out * direction).sum())

            assert finite_diff_check(loss, params, grads, eps=1e-5) < 1e-5

    def test_stale_cache_rejected(self):
        rng = np.random.default_rng(5)
        params = random_mlp([3, 4, 2], rng)
        other = random_mlp([3, 5, 2], rng)
        out, cache = mlp_forward(params, rng.standard_normal((2, 3)))
        with pytest.raises(ContractError):
            mlp_backward(other, cache, np.zeros_like(out))
        with pytest.raises(ContractError):
            mlp_backward(params, cache, np.zeros((2, 7)))


class TestFiniteDiffCheck:
    def test_quadratic_closed_form(self):
        params = MlpParams([LayerParams(np.array([[3.0]]), np.zeros(1))])
        analytic = zeros_like_params(params)
        analytic.layers[0].weight[0, 0] = 6.0  # d/dw of w^2 at w=3

        def f(p):
            return float(p.layers[0].weight[0, 0] ** 2)

        assert finite_diff_check(f, params, analytic, eps=1e-5) < 1e-8

    def test_detects_zeroed_analytic(self):
        # numeric gradient is 0.6 < 1, so the error equals |numeric| exactly
        params = MlpParams([LayerParams(np.array([[0.3]]), np.zeros(1))])
        zeroed = zeros_like_params(params)

        def f(p):
            return float(p.layers[0].weight[0, 0] ** 2)

        err = finite_diff_check(f, params, zeroed, eps=1e-5)
        assert err == pytest.approx(0.6, rel=1e-6)

    def test_constant_function_passes(self):
        params = MlpParams([LayerParams(np.array([[3.0]]), np.zeros(1))])
        assert finite_diff_check(lambda p: 2.5, params, zeros_like_params(params)) < 1e-12

    def test_bad_eps(self):
        params = MlpParams([LayerParams(np.array([[3.0]]), np.zeros(1))])
        with pytest.raises(SpecError):
            finite_diff_check(lambda p: 0.0, params, zeros_like_params(params), eps=0.0)

    def test_non_finite_objective(self):
        params = MlpParams([LayerParams(np.array([[3.0]]), np.zeros(1))])
        with pytest.raises(NumericError):
            finite_diff_check(lambda p: float("nan"), params, zeros_like_params(params))


def test_as_matrix_guard():
    with pytest.raises(ShapeError):
        numkit.as_matrix(np.ones(3))
    with pytest.raises(NumericError):
        numkit.as_matrix(np.array([[np.inf, 1.0]]))
