import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from quakemfcc.nn import layers as L


class TestConv:
    def test_identity_kernel(self, rng):
        x = rng.normal(size=(5, 6, 3))
        w = np.zeros((3, 3, 3, 3))
        for c in range(3):
            w[1, 1, c, c] = 1.0
        assert np.array_equal(L.conv2d_forward(x, w, np.zeros(3)), x)

    def test_table_shape(self, rng):
        out = L.conv2d_forward(rng.normal(size=(9, 13, 1)), rng.normal(size=(3, 3, 1, 16)), np.zeros(16))
        assert out.shape == (9, 13, 16)

    @pytest.mark.parametrize("shape", [(4, 5, 2, 3), (3, 3, 1, 2), (6, 2, 3, 1)])
    def test_matches_six_loops(self, rng, shape):
        h, w, c, f = shape
        x = rng.normal(size=(h, w, c))
        k = rng.normal(size=(3, 3, c, f))
        b = rng.normal(size=f)
        assert np.max(np.abs(L.conv2d_forward(x, k, b) - oracles.conv3x3_same(x, k, b))) <= 1e-10

    def test_batch_equals_singles(self, rng):
        x = rng.normal(size=(3, 4, 5, 2))
        k = rng.normal(size=(3, 3, 2, 4))
        b = rng.normal(size=4)
        batched = L.conv2d_forward(x, k, b)
        for i in range(3):
            assert np.allclose(batched[i], L.conv2d_forward(x[i], k, b), atol=1e-12)

    def test_channel_mismatch(self, rng):
        with pytest.raises(ValueError, match="channels"):
            L.conv2d_forward(rng.normal(size=(4, 4, 2)), rng.normal(size=(3, 3, 3, 1)), np.zeros(1))


class TestPool:
    def test_table_shape(self, rng):
        assert L.maxpool2x2(rng.normal(size=(9, 13, 128))).shape == (4, 6, 128)

    def test_constant(self):
        assert np.all(L.maxpool2x2(np.full((5, 7, 2), 3.0)) == 3.0)

    def test_matches_brute_force(self, rng):
        x = rng.normal(size=(7, 9, 3))
        assert np.array_equal(L.maxpool2x2(x), oracles.maxpool(x))

    def test_too_small(self):
        with pytest.raises(ValueError):
            L.maxpool2x2(np.zeros((1, 5, 1)))


class TestDenseAndActivations:
    def test_dense_matches_loops(self, rng):
        x, w, b = rng.normal(size=7), rng.normal(size=(7, 4)), rng.normal(size=4)
        assert np.max(np.abs(L.dense_forward(x, w, b) - oracles.dense(x, w, b))) <= 1e-10

    def test_dense_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            L.dense_forward(rng.normal(size=6), rng.normal(size=(7, 4)), np.zeros(4))

    def test_softmax_examples(self):
        assert L.softmax(np.array([0.0, 0.0])).tolist() == [0.5, 0.5]
        p = L.softmax(np.array([1000.0, 0.0]))
        assert np.all(np.isfinite(p)) and p[0] == pytest.approx(1.0) and p[1] < 1e-300 + 1e-400

    @given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(2, 6)),
                  elements=st.floats(-1e6, 1e6)))
    def test_softmax_is_a_distribution(self, z):
        p = L.softmax(z)
        assert np.all(p >= 0)
        assert np.all(np.abs(p.sum(axis=-1) - 1) <= 1e-12)

    def test_relu_product_is_zero(self, rng):
        x = rng.normal(size=100)
        assert np.all(L.relu(-x) * L.relu(x) == 0)

    def test_sigmoid_stable(self):
        s = L.sigmoid(np.array([-1000.0, 0.0, 1000.0]))
        assert s.tolist() == [0.0, 0.5, 1.0]

    def test_cross_entropy_values(self):
        loss, _ = L.cross_entropy(np.array([[0.5, 0.5], [0.5, 0.5]]), np.array([0, 1]))
        assert loss == pytest.approx(math.log(2), abs=1e-15)
        loss, _ = L.cross_entropy(np.array([[1.0, 0.0]]), np.array([0]))
        assert loss == 0.0

    def test_cross_entropy_bad_labels(self):
        with pytest.raises(ValueError):
            L.cross_entropy(np.array([[0.5, 0.5]]), np.array([2]))


class TestLstm:
    def test_zero_weights(self, rng):
        h = L.lstm_forward(rng.normal(size=(4, 3)), np.zeros((3, 8)), np.zeros((2, 8)), np.zeros(8))
        assert np.all(h == 0)

    def test_matches_cell_equations(self, rng):
        x = rng.normal(size=(4, 3))
        wx, wh, b = rng.normal(size=(3, 12)), rng.normal(size=(3, 12)), rng.normal(size=12)
        assert np.max(np.abs(L.lstm_forward(x, wx, wh, b) - oracles.lstm(x, wx, wh, b))) <= 1e-10

    def test_single_step(self, rng):
        x = rng.normal(size=(1, 2))
        wx, wh, b = rng.normal(size=(2, 4)), rng.normal(size=(1, 4)), rng.normal(size=4)
        s = 1 / (1 + np.exp(-(x[0] @ wx + b)))
        g = np.tanh((x[0] @ wx + b)[2])
        expected = s[3] * np.tanh(s[0] * g)
        assert L.lstm_forward(x, wx, wh, b)[0, 0] == pytest.approx(expected, abs=1e-14)

    def test_hidden_bounded(self, rng):
        x = rng.normal(size=(2, 20, 5)) * 50
        h = L.lstm_forward(x, rng.normal(size=(5, 16)) * 5, rng.normal(size=(4, 16)) * 5, rng.normal(size=16))
        assert np.all(np.abs(h) <= 1)

    def test_width_mismatch(self, rng):
        with pytest.raises(ValueError):
            L.lstm_forward(rng.normal(size=(3, 4)), np.zeros((3, 8)), np.zeros((2, 8)), np.zeros(8))


# -- gradients --------------------------------------------------------------

def _check(f, analytic, *arrays_, tol=1e-4):
    """Compare analytic gradients against central differences of scalar f."""
    for arr, g in zip(arrays_, analytic):
        num = oracles.numeric_grad(f, arr)
        assert oracles.rel_error(g, num) <= tol


@pytest.mark.parametrize("seed", range(5))
def test_conv_gradients(seed):
    r = np.random.default_rng(seed)
    x, w, b = r.normal(size=(2, 4, 5, 2)), r.normal(size=(3, 3, 2, 3)), r.normal(size=3)
    up = r.normal(size=(2, 4, 5, 3))

    def f():
        return float(np.sum(L.conv2d_cache(x, w, b)[0] * up))

    _, cache = L.conv2d_cache(x, w, b)
    _check(f, L.conv2d_backward(up, cache), x, w, b)


@pytest.mark.parametrize("seed", range(5))
def test_maxpool_gradients(seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=(2, 5, 7, 3))
    up = r.normal(size=(2, 2, 3, 3))

    def f():
        return float(np.sum(L.maxpool_cache(x)[0] * up))

    _, cache = L.maxpool_cache(x)
    _check(f, [L.maxpool_backward(up, cache)], x)


@pytest.mark.parametrize("seed", range(5))
def test_dense_relu_gradients(seed):
    r = np.random.default_rng(seed)
    x, w, b = r.normal(size=(3, 6)), r.normal(size=(6, 4)), r.normal(size=4)
    up = r.normal(size=(3, 4))

    def f():
        return float(np.sum(L.relu(L.dense_forward(x, w, b)) * up))

    z = L.dense_forward(x, w, b)
    _check(f, L.dense_backward(L.relu_backward(up, z), x, w), x, w, b)


@pytest.mark.parametrize("seed", range(5))
def test_lstm_gradients(seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=(2, 4, 3))
    wx, wh, b = r.normal(size=(3, 12)) * 0.5, r.normal(size=(3, 12)) * 0.5, r.normal(size=12) * 0.5
    up = r.normal(size=(2, 4, 3))

    def f():
        return float(np.sum(L.lstm_cache(x, wx, wh, b)[0] * up))

    _, cache = L.lstm_cache(x, wx, wh, b)
    _check(f, L.lstm_backward(up, cache), x, wx, wh, b)


@pytest.mark.parametrize("seed", range(5))
def test_softmax_cross_entropy_gradient(seed):
    r = np.random.default_rng(seed)
    z = r.normal(size=(4, 2)) * 3
    labels = r.integers(0, 2, size=4)

    def f():
        return L.cross_entropy(L.softmax(z), labels)[0]

    _, dz = L.cross_entropy(L.softmax(z), labels)
    _check(f, [dz], z)
