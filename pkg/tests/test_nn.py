import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pedcross.nn import (
    EmptyBatch,
    Model,
    NonFiniteInput,
    backward,
    cross_entropy_loss,
    finite_diff_gradients,
    forward,
    forward_batch,
    gradient_check,
    init_network,
    predict,
    predict_batch,
    random_gradcheck_case,
    relative_error,
)
from pedcross.pose import CrossingState, FeatureVector


def zero_model(h1=4, h2=3) -> Model:
    m = init_network(h1, h2, seed=0)
    return m.replace_params([np.zeros_like(w) for w in m.weights], [np.zeros_like(b) for b in m.biases])


def toy_model() -> Model:
    w1 = np.zeros((1, 18))
    w1[0, 0] = 1.0
    return Model(
        (18, 1, 1, 3),
        (w1, np.array([[2.0]]), np.array([[1.0], [0.0], [-1.0]])),
        (np.array([0.5]), np.array([-1.0]), np.zeros(3)),
    )


class TestInit:
    def test_deterministic(self):
        a, b = init_network(16, 8, seed=3), init_network(16, 8, seed=3)
        for x, y in zip(a.weights + a.biases, b.weights + b.biases):
            assert x.tobytes() == y.tobytes()

    def test_default_dims(self):
        assert init_network(seed=1).layer_dims == (18, 256, 128, 3)

    def test_zero_biases_and_bounds(self):
        m = init_network(32, 16, seed=9)
        assert all(np.all(b == 0) for b in m.biases)
        for w in m.weights:
            assert np.abs(w).max() < 1 / math.sqrt(w.shape[1])

    def test_needs_two_hidden_layers(self):
        with pytest.raises(ValueError):
            Model((18, 3), (np.zeros((3, 18)),), (np.zeros(3),))


class TestForward:
    def test_zero_model_uniform(self):
        p = forward(zero_model(), np.ones(18))
        np.testing.assert_allclose(p, [1 / 3] * 3, rtol=0, atol=1e-15)

    def test_toy_hand_computation(self):
        x = np.zeros(18)
        x[0] = 1.0
        # h1 = relu(1 + 0.5) = 1.5; h2 = relu(2 * 1.5 - 1) = 2; logits = (2, 0, -2)
        denom = math.exp(2) + 1 + math.exp(-2)
        expected = [math.exp(2) / denom, 1 / denom, math.exp(-2) / denom]
        np.testing.assert_allclose(forward(toy_model(), x), expected, rtol=1e-14)

    def test_toy_dead_first_layer(self):
        x = np.zeros(18)
        x[0] = -3.0
        # h1 = relu(-2.5) = 0; h2 = relu(-1) = 0; logits all zero
        np.testing.assert_allclose(forward(toy_model(), x), [1 / 3] * 3)

    def test_non_finite_input(self):
        x = np.zeros(18)
        x[3] = np.nan
        with pytest.raises(NonFiniteInput):
            forward(zero_model(), x)

    def test_softmax_normalization_many(self, rng):
        for _ in range(100):
            m = init_network(int(rng.integers(1, 20)), int(rng.integers(1, 20)), seed=int(rng.integers(1 << 32)))
            X = rng.normal(0, 3, size=(100, 18))
            p = forward_batch(m, X)
            assert np.all(p > 0) and np.all(p < 1)
            np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=0, atol=1e-9)

    def test_large_logits_stable(self):
        m = init_network(4, 4, seed=0)
        m = m.replace_params([w * 1e3 for w in m.weights], m.biases)
        p = forward(m, np.full(18, 10.0))
        assert np.all(np.isfinite(p)) and abs(p.sum() - 1) < 1e-9

    def test_repeatable(self, rng):
        m = init_network(8, 8, seed=2)
        x = rng.normal(size=18)
        assert forward(m, x).tobytes() == forward(m, x).tobytes()

    def test_accepts_feature_vector(self):
        fv = FeatureVector(np.zeros(18))
        assert forward(zero_model(), fv).shape == (3,)


class TestPredict:
    def test_tie_goes_to_c(self):
        assert predict(zero_model(), np.zeros(18)) is CrossingState.C

    def test_argmax(self):
        m = zero_model()
        m = m.replace_params(m.weights, (m.biases[0], m.biases[1], np.log([0.5, 0.3, 0.2])))
        assert predict(m, np.zeros(18)) is CrossingState.C
        m = m.replace_params(m.weights, (m.biases[0], m.biases[1], np.log([0.2, 0.3, 0.5])))
        assert predict(m, np.zeros(18)) is CrossingState.LONG

    def test_matches_forward_argmax(self, rng):
        m = init_network(16, 16, seed=4)
        X = rng.normal(size=(200, 18))
        np.testing.assert_array_equal(predict_batch(m, X), np.argmax(forward_batch(m, X), axis=1))

    @settings(max_examples=50)
    @given(st.floats(-50, 50))
    def test_output_bias_shift_invariance(self, c):
        m = init_network(8, 8, seed=5)
        X = np.random.default_rng(0).normal(size=(50, 18))
        shifted = m.replace_params(m.weights, (m.biases[0], m.biases[1], m.biases[2] + c))
        np.testing.assert_array_equal(predict_batch(m, X), predict_batch(shifted, X))


class TestLoss:
    def test_uniform(self):
        assert cross_entropy_loss(np.full(3, 1 / 3), CrossingState.LONG) == pytest.approx(math.log(3))

    def test_confident(self):
        assert cross_entropy_loss(np.array([1 - 1e-12, 5e-13, 5e-13]), 0) == pytest.approx(0.0, abs=1e-11)

    def test_direct(self):
        assert cross_entropy_loss(np.array([0.7, 0.2, 0.1]), CrossingState.NC) == pytest.approx(1.6094379, abs=1e-7)


class TestBackward:
    def test_zero_model_output_bias(self):
        grads, loss = backward(zero_model(), [(np.ones(18), CrossingState.NC)])
        np.testing.assert_allclose(grads.biases[2], [1 / 3, 1 / 3 - 1, 1 / 3], atol=1e-15)
        assert loss == pytest.approx(math.log(3))

    def test_empty_batch(self):
        with pytest.raises(EmptyBatch):
            backward(zero_model(), [])
        with pytest.raises(EmptyBatch):
            finite_diff_gradients(zero_model(), [])

    def test_duplication_invariant(self, rng):
        m = init_network(6, 5, seed=1)
        batch = [(rng.normal(size=18), int(rng.integers(3))) for _ in range(4)]
        g1, l1 = backward(m, batch)
        g2, l2 = backward(m, batch + batch)
        np.testing.assert_allclose(g2.flat(), g1.flat(), rtol=1e-12, atol=1e-15)
        assert l2 == pytest.approx(l1)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(99)
        for _ in range(10):
            model, batch = random_gradcheck_case(rng)
            res = gradient_check(model, batch)
            assert res.passed, res

    def test_dead_unit_zero_gradient(self):
        m = init_network(3, 3, seed=0)
        w0 = np.array(m.weights[0])
        b0 = np.array(m.biases[0])
        w0[1] = 0.0
        b0[1] = -1.0  # unit 1 of layer 1 is off for every input
        m = m.replace_params((w0, m.weights[1], m.weights[2]), (b0, m.biases[1], m.biases[2]))
        batch = (np.random.default_rng(0).normal(size=(4, 18)), np.array([0, 1, 2, 0]))
        fd = finite_diff_gradients(m, batch)
        assert np.all(fd.weights[0][1] == 0.0) and fd.biases[0][1] == 0.0
        assert np.all(backward(m, batch)[0].weights[0][1] == 0.0)

    def test_central_difference_order(self):
        # wide margins from every relu kink so both step sizes stay in one linear region
        rng = np.random.default_rng(4)
        w1 = rng.uniform(0.1, 0.3, size=(4, 18))
        w2 = rng.uniform(0.1, 0.3, size=(4, 4))
        w3 = rng.normal(size=(3, 4))
        m = Model((18, 4, 4, 3), (w1, w2, w3), (np.ones(4), np.ones(4), np.zeros(3)))
        batch = (rng.uniform(0.5, 1.0, size=(3, 18)), np.array([0, 1, 2]))
        exact = backward(m, batch)[0].flat()
        e1 = np.abs(finite_diff_gradients(m, batch, eps=1e-2).flat() - exact).max()
        e2 = np.abs(finite_diff_gradients(m, batch, eps=5e-3).flat() - exact).max()
        assert 3.0 < e1 / e2 < 5.0

    def test_corrupted_gradient_detected(self):
        rng = np.random.default_rng(1)
        model, batch = random_gradcheck_case(rng)

        def bad(m, b):
            g, loss = backward(m, b)
            w = list(g.weights)
            w[0] = w[0] + 1e-3
            return type(g)(tuple(w), g.biases), loss

        assert not gradient_check(model, batch, backward_fn=bad).passed


def test_relative_error_floor():
    assert relative_error(np.array([0.0]), np.array([0.0]))[0] == 0.0
    assert relative_error(np.array([1.0]), np.array([1.0 + 1e-6]))[0] == pytest.approx(1e-6, rel=1e-3)
