import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from isoword.errors import DegenerateInput, IndexOutOfRange, ShapeMismatch
from isoword.nn import (
    BLSTM,
    LSTM,
    Adam,
    ChannelsLast,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    GlobalAvgPool,
    MaxPool2D,
    ReLU,
    Standardize,
    ToSequence,
    cross_entropy,
    dropout,
    relu,
    softmax,
    softmax_cross_entropy,
)

from .oracles import numeric_grad, rel_error

H = 1e-5
TOL = 1e-4
INSTANCES = 20


def spread(rng, shape, gap=1e-2):
    """Random values whose pairwise gaps and distance from zero exceed ``gap``.

    Keeps max-pool and ReLU kinks out of reach of the finite-difference step.
    """
    n = int(np.prod(shape))
    vals = (np.arange(n) - n // 2 + 0.5) * gap * 3
    return rng.permutation(vals).reshape(shape)


def fd_check(layer, x, rng):
    """Worst relative error over the input gradient and every parameter gradient."""
    out = layer.forward(x)
    r = rng.normal(size=out.shape)

    def loss():
        return float(np.sum(layer.forward(x) * r))

    layer.forward(x)
    dx = layer.backward(r)
    analytic = {name: g.copy() for name, g in layer.grads.items()}
    errs = []
    if dx is not None:
        errs.append(rel_error(dx, numeric_grad(loss, x, H)))
    for name, p in layer.params.items():
        errs.append(rel_error(analytic[name], numeric_grad(loss, p, H)))
    return max(errs)


def worst_over_instances(make, seed=0):
    rng = np.random.default_rng(seed)
    return max(fd_check(*make(rng), rng) for _ in range(INSTANCES))


# -- finite-difference suite, one case per layer kind


def test_fd_dense():
    assert worst_over_instances(lambda r: (Dense(5, 4, r), r.normal(size=(3, 5)))) < TOL


def test_fd_conv2d():
    def make(r):
        cin = int(r.integers(1, 4))
        return Conv2D(cin, 3, 2, rng=r), r.normal(size=(2, 6, 7, cin))
    assert worst_over_instances(make) < TOL


def test_fd_maxpool():
    def make(r):
        h, w = r.integers(2, 7, size=2)
        return MaxPool2D(2), spread(r, (2, h, w, 3))
    assert worst_over_instances(make) < TOL


def test_fd_global_avg_pool():
    assert worst_over_instances(lambda r: (GlobalAvgPool(), r.normal(size=(2, 3, 4, 5)))) < TOL


def test_fd_relu():
    assert worst_over_instances(lambda r: (ReLU(), spread(r, (3, 7)))) < TOL


def test_fd_lstm_t5():
    def make(r):
        return LSTM(3, 4, return_sequences=bool(r.integers(2)), rng=r), r.normal(size=(2, 5, 3))
    assert worst_over_instances(make) < TOL


def test_fd_blstm_t4():
    def make(r):
        layer = BLSTM(3, 4, rng=r)
        for p in layer.params.values():
            p[...] = r.normal(scale=0.5, size=p.shape)
        return layer, r.normal(size=(2, 4, 3))
    assert worst_over_instances(make) < TOL


def test_fd_reshaping_layers():
    for make in (
        lambda r: (ChannelsLast(), r.normal(size=(2, 3, 4, 5))),
        lambda r: (ToSequence(), r.normal(size=(2, 3, 4, 5))),
        lambda r: (Flatten(), r.normal(size=(2, 3, 4))),
        lambda r: (Standardize((1, 4, 5), (0, 2)), r.normal(size=(3, 1, 4, 5))),
    ):
        assert worst_over_instances(make) < TOL


def test_fd_softmax_cross_entropy():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(INSTANCES):
        z = rng.normal(size=(4, 6)) * 3
        y = rng.integers(0, 6, size=4)
        _, _, grad = softmax_cross_entropy(z, y)
        num = numeric_grad(lambda: softmax_cross_entropy(z, y)[0], z, H)
        worst = max(worst, rel_error(grad, num))
    assert worst < 1e-7


def test_fd_dropout_with_fixed_mask():
    layer = Dropout(0.3)
    x = np.random.default_rng(0).normal(size=(4, 6))
    y = layer.forward(x, training=True, rng=np.random.default_rng(1))
    g = layer.backward(np.ones_like(y))
    np.testing.assert_array_equal(g, layer._mask)


# -- spec examples


def test_dense_identity():
    d = Dense(2, 2)
    d.params["W"][...] = np.eye(2)
    np.testing.assert_array_equal(d.forward(np.array([[3.0, -1.0]])), [[3.0, -1.0]])
    with pytest.raises(ShapeMismatch):
        d.forward(np.zeros((1, 3)))


def test_conv_window_sums():
    conv = Conv2D(1, 1, 2)
    conv.params["K"][...] = 1.0
    out = conv.forward(np.ones((1, 3, 3, 1)))
    np.testing.assert_array_equal(out[0, :, :, 0], np.full((2, 2), 4.0))
    conv.params["b"][...] = 0.5
    np.testing.assert_array_equal(conv.forward(np.zeros((1, 3, 3, 1))), 0.5)


def test_conv_matches_brute_force_correlation():
    rng = np.random.default_rng(2)
    conv = Conv2D(2, 3, 2, rng=rng)
    conv.params["b"][...] = rng.normal(size=3)
    x = rng.normal(size=(2, 6, 7))
    out = conv.forward(ChannelsLast().forward(x[None]))[0]
    K, b = conv.params["K"], conv.params["b"]
    for o in range(3):
        for i in range(5):
            for j in range(6):
                expected = np.sum(K[o] * x[:, i:i + 2, j:j + 2]) + b[o]
                assert out[i, j, o] == pytest.approx(expected, abs=1e-12)


def test_maxpool_examples():
    pool = MaxPool2D(2)
    assert pool.forward(np.array([[1.0, 2.0], [3.0, 4.0]])[None, :, :, None]).item() == 4.0
    assert pool.forward(np.zeros((1, 5, 5, 1))).shape == (1, 2, 2, 1)
    with pytest.raises(DegenerateInput):
        pool.forward(np.zeros((1, 1, 4, 1)))


def test_maxpool_tie_goes_to_first_row_major():
    pool = MaxPool2D(2)
    pool.forward(np.array([[1.0, 5.0], [5.0, 5.0]])[None, :, :, None])
    g = pool.backward(np.ones((1, 1, 1, 1)))[0, :, :, 0]
    np.testing.assert_array_equal(g, [[0, 1], [0, 0]])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(2, 9), st.integers(2, 9))
def test_maxpool_routes_each_gradient_to_one_cell(seed, h, w):
    rng = np.random.default_rng(seed)
    pool = MaxPool2D(2)
    x = rng.normal(size=(1, h, w, 2))
    out = pool.forward(x)
    g = rng.uniform(0.5, 1.5, size=out.shape)
    dx = pool.backward(g)
    for i in range(h // 2):
        for j in range(w // 2):
            for c in range(2):
                win = dx[0, 2 * i:2 * i + 2, 2 * j:2 * j + 2, c]
                assert np.count_nonzero(win) == 1
                assert win.sum() == g[0, i, j, c]
                assert x[0, 2 * i:2 * i + 2, 2 * j:2 * j + 2, c][win != 0].item() == out[0, i, j, c]
    assert dx.sum() == pytest.approx(g.sum())


def test_global_avg_pool_values():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])[None, :, :, None]
    assert GlobalAvgPool().forward(x).item() == 2.5


def test_relu_and_softmax():
    np.testing.assert_array_equal(relu(np.array([-1.0, 0.0, 2.0])), [0, 0, 2])
    np.testing.assert_allclose(softmax(np.zeros(20)), 0.05)


@settings(max_examples=50)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=30))
def test_softmax_normalized_and_shift_invariant(z):
    z = np.array(z)
    p = softmax(z)
    assert abs(p.sum() - 1.0) < 1e-12
    np.testing.assert_allclose(softmax(z + 100.0), p, atol=1e-12)


def test_cross_entropy_examples():
    assert cross_entropy(np.array([0.0, 1.0]), 1) == 0.0
    assert cross_entropy(np.full(20, 0.05), 3) == pytest.approx(math.log(20))
    assert cross_entropy(np.array([1.0, 0.0]), 1) == pytest.approx(-math.log(1e-12))
    with pytest.raises(IndexOutOfRange):
        cross_entropy(np.full(4, 0.25), 4)
    with pytest.raises(IndexOutOfRange):
        cross_entropy(np.full(4, 0.25), -1)


def test_dropout_modes():
    x = np.arange(6.0)
    assert dropout(x, 0.0, "train", np.random.default_rng(0)) is x
    assert dropout(x, 0.2, "infer") is x
    with pytest.raises(ValueError):
        dropout(x, 1.0, "train", np.random.default_rng(0))


def test_dropout_expectation_within_three_sigma():
    n, rate = 200_000, 0.2
    out = dropout(np.ones(n), rate, "train", np.random.default_rng(5))
    # each entry is 1/(1-rate) with prob 1-rate, else 0
    sigma = math.sqrt(rate / (1 - rate)) / math.sqrt(n)
    assert abs(out.mean() - 1.0) < 3 * sigma
    assert set(np.unique(out)) <= {0.0, 1 / (1 - rate)}


def test_lstm_zero_params_give_zero_output():
    layer = LSTM(3, 4, return_sequences=True)
    for p in layer.params.values():
        p[...] = 0.0
    np.testing.assert_array_equal(layer.forward(np.random.default_rng(0).normal(size=(2, 5, 3))), 0.0)


def test_lstm_single_step_is_one_cell():
    rng = np.random.default_rng(1)
    layer = LSTM(3, 2, rng=rng)
    layer.params["U"][...] = 0.0
    layer.params["b"][...] = rng.normal(size=8)
    x = rng.normal(size=(1, 1, 3))
    z = layer.params["W"] @ x[0, 0] + layer.params["b"]
    sig = lambda v: 1 / (1 + np.exp(-v))
    # the forget gate multiplies c0 = 0, so it drops out
    i, g, o = sig(z[:2]), np.tanh(z[4:6]), sig(z[6:])
    np.testing.assert_allclose(layer.forward(x)[0], o * np.tanh(i * g), atol=1e-15)


def test_blstm_palindrome_symmetry():
    rng = np.random.default_rng(3)
    layer = BLSTM(2, 3, rng=rng)
    layer.params["bwd.W"][...] = layer.params["fwd.W"]
    layer.params["bwd.U"][...] = layer.params["fwd.U"]
    layer.params["bwd.b"][...] = layer.params["fwd.b"]
    half = rng.normal(size=(1, 3, 2))
    x = np.concatenate([half, half[:, ::-1]], axis=1)
    out = layer.forward(x)[0]
    t = out.shape[0]
    for s in range(t):
        np.testing.assert_allclose(out[s, :3], out[t - 1 - s, 3:], atol=1e-14)


def test_blstm_zero_params():
    layer = BLSTM(2, 3)
    for p in layer.params.values():
        p[...] = 0.0
    assert np.all(layer.forward(np.ones((1, 4, 2))) == 0)


def test_lstm_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        LSTM(3, 2).forward(np.zeros((1, 4, 5)))


def test_adam_first_step():
    theta = np.zeros(1)
    Adam().step({"t": theta}, {"t": np.ones(1)})
    assert theta[0] == pytest.approx(-0.001, rel=1e-6)


def test_adam_zero_gradient_is_noop():
    theta = np.array([1.0, -2.0])
    Adam().step({"t": theta}, {"t": np.zeros(2)})
    np.testing.assert_array_equal(theta, [1.0, -2.0])


def test_adam_tensors_are_independent():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=3), rng.normal(size=(2, 2))
    ga, gb = rng.normal(size=3), rng.normal(size=(2, 2))
    a1, b1, a2, b2 = a.copy(), b.copy(), a.copy(), b.copy()
    Adam().step({"a": a1, "b": b1}, {"a": ga, "b": gb})
    Adam().step({"a": a2}, {"a": ga})
    Adam().step({"b": b2}, {"b": gb})
    np.testing.assert_array_equal(a1, a2)
    np.testing.assert_array_equal(b1, b2)


def test_adam_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        Adam().step({"t": np.zeros(2)}, {"t": np.zeros(3)})


def test_standardize_fit():
    layer = Standardize((1, 3, 4), reduce_axes=(0, 2))
    x = np.random.default_rng(0).normal(loc=5, scale=3, size=(10, 1, 3, 4))
    x[:, :, 2] = 7.0
    layer.fit(x)
    y = layer.forward(x)
    np.testing.assert_allclose(y[:, :, :2].mean(axis=(0, 1, 3)), 0, atol=1e-12)
    np.testing.assert_allclose(y[:, :, :2].std(axis=(0, 1, 3)), 1, atol=1e-12)
    # a constant row is centred but not blown up
    np.testing.assert_array_equal(y[:, :, 2], 0.0)


def test_forward_is_deterministic_given_seed():
    x = np.random.default_rng(0).normal(size=(4, 10))
    layer = Dropout(0.5)
    a = layer.forward(x, training=True, rng=np.random.default_rng(9))
    b = layer.forward(x, training=True, rng=np.random.default_rng(9))
    np.testing.assert_array_equal(a, b)
