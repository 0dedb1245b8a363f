import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stallsgd.network import (
    N_PARAMS,
    backprop_grad,
    dataset_metrics,
    feature_block,
    forward,
    forward_batch,
    init_params,
    logistic,
    loss,
    pack,
    total_gradient,
    unpack,
)
from stallsgd.optim import BFGSConfig, bfgs_minimize
from stallsgd.network import mean_loss
from stallsgd.selfcheck import finite_difference_grad, gradient_relative_error, reference_loss


def _sig(t):
    return 1 / (1 + math.exp(-t))


class TestLayout:
    def test_sixty_one_parameters(self):
        assert N_PARAMS == 5 * (10 + 1) + 5 + 1 == 61

    def test_blocks_partition_features(self):
        idx = [i for u in range(5) for i in feature_block(u)]
        assert sorted(idx) == list(range(50))

    def test_pack_unpack(self):
        p = np.arange(61.0)
        W, b, v, c = unpack(p)
        assert W.shape == (5, 10) and b.shape == (5,) and v.shape == (5,)
        np.testing.assert_array_equal(W[1], np.arange(11.0, 21.0))
        assert b[1] == 21.0 and c == 60.0
        np.testing.assert_array_equal(pack(W, b, v, c), p)

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            unpack(np.zeros(60))

    def test_init_range_and_determinism(self):
        p = init_params(3)
        assert p.shape == (61,)
        assert np.all((p >= -0.5) & (p < 0.5))
        np.testing.assert_array_equal(p, init_params(3))
        assert not np.array_equal(p, init_params(4))


class TestForward:
    def test_all_zero(self):
        assert forward(np.zeros(61), np.ones(50)) == 0.5

    def test_saturation(self):
        p = np.zeros(61)
        p[-1] = 800.0
        assert forward(p, np.zeros(50)) == 1.0
        p[-1] = -800.0
        assert forward(p, np.zeros(50)) == 0.0

    def test_hand_composition(self):
        W = np.zeros((5, 10))
        W[0, 0], W[2, 3] = 0.5, -1.0
        b = np.array([0.1, 0.0, 0.2, 0.0, 0.0])
        v = np.array([1.0, -2.0, 0.5, 0.0, 3.0])
        c = -0.3
        x = np.zeros(50)
        x[0], x[23] = 2.0, 1.5
        h = [_sig(0.5 * 2.0 + 0.1), _sig(0.0), _sig(-1.5 + 0.2), _sig(0.0), _sig(0.0)]
        expected = _sig(sum(vi * hi for vi, hi in zip(v, h)) + c)
        assert forward(pack(W, b, v, c), x) == pytest.approx(expected, rel=1e-15)

    def test_matches_long_double_reference(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            p, x = rng.uniform(-1, 1, 61), rng.normal(0, 3, 50)
            assert loss(p, x, 1.0) == pytest.approx(float(reference_loss(p, x, 1.0)), rel=1e-12)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(1)
        p, X = rng.uniform(-1, 1, 61), rng.normal(size=(20, 50))
        np.testing.assert_allclose(forward_batch(p, X), [forward(p, x) for x in X], rtol=1e-14)

    def test_hidden_unit_permutation(self):
        rng = np.random.default_rng(2)
        W, b, v, c = unpack(rng.uniform(-1, 1, 61))
        x = rng.normal(size=50)
        perm = np.array([3, 0, 4, 1, 2])
        xb = x.reshape(5, 10)[perm].ravel()
        assert forward(pack(W[perm], b[perm], v[perm], c), xb) == pytest.approx(forward(pack(W, b, v, c), x), rel=1e-14)

    def test_logistic_stable(self):
        with np.errstate(over="raise"):
            assert logistic(-1000.0) == 0.0
            assert logistic(1000.0) == 1.0
        assert logistic(0.0) == 0.5

    def test_wrong_feature_count(self):
        with pytest.raises(ValueError):
            forward(np.zeros(61), np.zeros(49))


class TestLoss:
    def test_perfect_prediction(self):
        assert loss(np.zeros(61), np.zeros(50), 0.5) == 0.0

    def test_zero_params_signal(self):
        assert loss(np.zeros(61), np.zeros(50), 1.0) == 0.25

    @settings(max_examples=50)
    @given(st.integers(0, 2**31), st.sampled_from([0.0, 1.0]))
    def test_loss_in_unit_interval(self, seed, label):
        rng = np.random.default_rng(seed)
        value = loss(rng.uniform(-5, 5, 61), rng.normal(0, 10, 50), label)
        assert 0.0 <= value <= 1.0

    def test_unknown_loss(self):
        with pytest.raises(ValueError):
            loss(np.zeros(61), np.zeros(50), 1.0, loss="hinge")


class TestGradient:
    def test_zero_at_label(self):
        np.testing.assert_array_equal(backprop_grad(np.zeros(61), np.ones(50), 0.5), np.zeros(61))

    @pytest.mark.parametrize("loss_name", ["squared", "cross_entropy"])
    def test_finite_differences(self, loss_name):
        rng = np.random.default_rng(5)
        worst = 0.0
        for _ in range(15):
            p, x, y = rng.uniform(-1, 1, 61), rng.normal(size=50), float(rng.integers(0, 2))
            worst = max(worst, gradient_relative_error(backprop_grad(p, x, y, loss_name), finite_difference_grad(p, x, y, loss_name)))
        assert worst < 1e-5

    def test_zero_feature_zero_weight_gradient(self):
        rng = np.random.default_rng(6)
        p, x = rng.uniform(-1, 1, 61), rng.normal(size=50)
        x[[3, 17, 49]] = 0.0
        W_grad = unpack(backprop_grad(p, x, 1.0)).W
        assert W_grad[0, 3] == 0.0 and W_grad[1, 7] == 0.0 and W_grad[4, 9] == 0.0

    def test_weight_gradient_proportional_to_input(self):
        rng = np.random.default_rng(7)
        p, x = rng.uniform(-1, 1, 61), rng.normal(size=50)
        g = unpack(backprop_grad(p, x, 0.0))
        # per unit, dL/dw_ij = (dL/db_i) * x_ij
        np.testing.assert_allclose(g.W, g.b[:, None] * x.reshape(5, 10), rtol=1e-14)


class TestDatasetMetrics:
    def test_single_perfect_example(self):
        p = np.zeros(61)
        p[-1] = 800.0  # output saturates to exactly 1
        m = dataset_metrics(p, np.zeros((1, 50)), np.array([1.0]))
        assert (m.mean_loss, m.misclassification_rate, m.total_gradient_norm) == (0.0, 0.0, 0.0)

    def test_cancelling_gradients(self):
        # same input, opposite labels: per-example gradients cancel exactly at output 0.5
        X = np.zeros((2, 50))
        m = dataset_metrics(np.zeros(61), X, np.array([0.0, 1.0]))
        assert m.total_gradient_norm == 0.0
        assert m.mean_loss == 0.25

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            dataset_metrics(np.zeros(61), np.zeros((0, 50)), np.zeros(0))

    def test_total_gradient_is_mean(self):
        rng = np.random.default_rng(8)
        p, X, y = rng.uniform(-1, 1, 61), rng.normal(size=(37, 50)), rng.integers(0, 2, 37).astype(float)
        expected = np.mean([backprop_grad(p, x, t) for x, t in zip(X, y)], axis=0)
        np.testing.assert_allclose(total_gradient(p, X, y, batch=8), expected, rtol=1e-12, atol=1e-16)

    def test_misclassification(self):
        p = np.zeros(61)
        p[-1] = 2.0  # always predicts signal
        m = dataset_metrics(p, np.zeros((4, 50)), np.array([1.0, 1.0, 0.0, 1.0]))
        assert m.misclassification_rate == 0.25

    def test_bfgs_stationary_point(self):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(30, 50))
        y = (X[:, 0] + 0.5 * rng.normal(size=30) > 0).astype(float)
        res = bfgs_minimize(
            lambda p: mean_loss(p, X, y), lambda p: total_gradient(p, X, y), init_params(0), BFGSConfig(grad_tol=1e-7, max_iters=2000)
        )
        assert res.status == "converged"
        assert dataset_metrics(res.theta, X, y).total_gradient_norm < 1e-6
