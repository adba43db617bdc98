"""Numerics core: dense layers, loss, optimizer, seeded streams."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sib import Adam, DenseLayer, Mlp, Rng, softmax, softmax_cross_entropy
from sib.errors import DimensionError, ValidationError
from sib.numcore import adam_step, dense_forward, glorot_uniform


# ---------------------------------------------------------------------------
# dense layer
# ---------------------------------------------------------------------------

def _layer_from(w, b):
    w = np.asarray(w, dtype=np.float64)
    layer = DenseLayer(w.shape[1], w.shape[0], dtype=np.float64)
    layer.weights[...] = w
    layer.bias[...] = np.asarray(b, dtype=np.float64)
    return layer


def test_dense_identity():
    layer = _layer_from(np.eye(2), [0.0, 0.0])
    out = dense_forward(layer, np.array([[3.0, 4.0]]))
    assert np.allclose(out, [[3.0, 4.0]])


def test_dense_affine():
    layer = _layer_from([[1.0, 1.0]], [1.0])
    out = dense_forward(layer, np.array([[2.0, 3.0]]))
    assert np.allclose(out, [[6.0]])


def test_dense_matches_naive_matmul():
    rng = Rng(7)
    w = rng.stream("w").standard_normal(5, 4, dtype=np.float64)
    b = rng.stream("b").standard_normal(1, 5, dtype=np.float64)[0]
    x = rng.stream("x").standard_normal(3, 4, dtype=np.float64)
    layer = _layer_from(w, b)
    out = layer.forward(x)
    # independent triple-loop oracle
    expected = np.zeros((3, 5))
    for i in range(3):
        for j in range(5):
            acc = b[j]
            for k in range(4):
                acc += x[i, k] * w[j, k]
            expected[i, j] = acc
    assert np.max(np.abs(out - expected)) < 1e-12


def test_dense_shape_mismatch():
    layer = DenseLayer(3, 2)
    with pytest.raises(DimensionError):
        layer.forward(np.zeros((1, 4), dtype=np.float32))


def test_dense_backward_requires_forward():
    layer = DenseLayer(3, 2)
    with pytest.raises(RuntimeError):
        layer.backward(np.zeros((1, 2), dtype=np.float32))


def test_dense_backward_matches_fd():
    rng = Rng(3)
    layer = _layer_from(
        rng.stream("w").standard_normal(3, 4, dtype=np.float64),
        rng.stream("b").standard_normal(1, 3, dtype=np.float64)[0],
    )
    x = rng.stream("x").standard_normal(2, 4, dtype=np.float64)
    out = layer.forward(x)
    dout = rng.stream("d").standard_normal(*out.shape, dtype=np.float64)
    dx, dw, db = layer.backward(dout)

    def scalar_loss():
        return float((layer.forward(x, cache=False) * dout).sum())

    h = 1e-6
    for arr, grad in ((layer.weights, dw), (layer.bias, db), (x, dx)):
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            lp = scalar_loss()
            flat[j] = orig - h
            lm = scalar_loss()
            flat[j] = orig
            assert abs((lp - lm) / (2 * h) - gflat[j]) < 1e-6


# ---------------------------------------------------------------------------
# softmax cross-entropy
# ---------------------------------------------------------------------------

def test_ce_uniform_two_class():
    loss, _ = softmax_cross_entropy(np.array([[0.0, 0.0]]), np.array([[1.0, 0.0]]))
    assert abs(loss - math.log(2.0)) < 1e-12


def test_ce_saturated():
    loss, _ = softmax_cross_entropy(np.array([[100.0, 0.0]]), np.array([[1.0, 0.0]]))
    assert loss < 1e-10


def test_ce_grad_matches_finite_differences():
    rng = Rng(3)
    logits = rng.stream("logits").standard_normal(4, 5, dtype=np.float64)
    raw = rng.stream("targets").uniform01(4, 5, dtype=np.float64) + 0.1
    targets = raw / raw.sum(axis=1, keepdims=True)
    _, grad = softmax_cross_entropy(logits, targets)
    h = 1e-5
    for i in range(4):
        for j in range(5):
            orig = logits[i, j]
            logits[i, j] = orig + h
            lp, _ = softmax_cross_entropy(logits, targets)
            logits[i, j] = orig - h
            lm, _ = softmax_cross_entropy(logits, targets)
            logits[i, j] = orig
            assert abs((lp - lm) / (2 * h) - grad[i, j]) < 1e-6


def test_ce_rejects_unnormalized_targets():
    with pytest.raises(ValidationError):
        softmax_cross_entropy(np.zeros((1, 3)), np.array([[0.5, 0.2, 0.2]]))


def test_ce_rejects_shape_mismatch():
    with pytest.raises(DimensionError):
        softmax_cross_entropy(np.zeros((1, 3)), np.ones((1, 2)) / 2.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 6), st.integers(2, 8))
def test_softmax_rows_sum_to_one(seed, rows, cols):
    logits = Rng(seed).stream("l").standard_normal(rows, cols, dtype=np.float64) * 10
    probs = softmax(logits)
    assert np.max(np.abs(probs.sum(axis=1) - 1.0)) < 1e-9


# ---------------------------------------------------------------------------
# adam
# ---------------------------------------------------------------------------

def test_adam_zero_gradient_is_fixed_point():
    params = [np.array([1.5, -2.0], dtype=np.float32)]
    before = params[0].copy()
    opt = Adam(lr=0.1)
    adam_step(opt, params, [np.zeros(2, dtype=np.float32)])
    assert np.array_equal(params[0], before)
    assert opt.step_count == 1


@pytest.mark.parametrize("grad", [0.3, -7.0, 1e-4])
def test_adam_first_step_magnitude_is_lr(grad):
    lr = 0.05
    params = [np.array([1.0])]
    opt = Adam(lr=lr)
    opt.step(params, [np.array([grad])])
    delta = params[0][0] - 1.0
    assert np.sign(delta) == -np.sign(grad)
    # bias-corrected first step: m_hat/sqrt(v_hat) = sign(g) up to epsilon
    assert abs(abs(delta) - lr) < lr * 1e-3


def test_adam_descends_quadratic_and_matches_reference():
    # independent reference implementation of the same update rule
    def reference_adam_run(x0, lr, steps):
        x, m, v = x0, 0.0, 0.0
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        out = []
        for t in range(1, steps + 1):
            g = 2.0 * x
            m = beta1 * m + (1 - beta1) * g
            v = beta2 * v + (1 - beta2) * g * g
            x -= lr * (m / (1 - beta1 ** t)) / (math.sqrt(v / (1 - beta2 ** t)) + eps)
            out.append(x)
        return out

    params = [np.array([1.0])]
    opt = Adam(lr=0.1)
    trajectory = []
    for _ in range(10):
        opt.step(params, [2.0 * params[0]])
        trajectory.append(float(params[0][0]))
    expected = reference_adam_run(1.0, 0.1, 10)
    assert np.allclose(trajectory, expected, atol=1e-12)
    magnitudes = [1.0] + [abs(x) for x in trajectory]
    assert all(b < a for a, b in zip(magnitudes, magnitudes[1:]))


def test_adam_shape_mismatch():
    opt = Adam()
    with pytest.raises(DimensionError):
        opt.step([np.zeros(3)], [np.zeros(2)])


# ---------------------------------------------------------------------------
# rng
# ---------------------------------------------------------------------------

def test_bernoulli_all_zero_and_all_one():
    rng = Rng(0).stream("b")
    assert not rng.bernoulli(np.zeros((4, 5))).any()
    assert rng.bernoulli(np.ones((4, 5))).all()


def test_bernoulli_rejects_bad_probs():
    with pytest.raises(ValidationError):
        Rng(0).bernoulli(np.array([[0.5, 1.2]]))


def test_normal_sample_moments():
    draws = Rng(11).stream("normal").standard_normal(1000, 100, dtype=np.float64)
    assert abs(draws.mean()) < 0.02
    assert abs(draws.var() - 1.0) < 0.03


def test_streams_are_deterministic_and_distinct():
    a1 = Rng(5).stream("noise", 3).uniform01(2, 3)
    a2 = Rng(5).stream("noise", 3).uniform01(2, 3)
    b = Rng(5).stream("noise", 4).uniform01(2, 3)
    c = Rng(6).stream("noise", 3).uniform01(2, 3)
    assert np.array_equal(a1, a2)
    assert not np.array_equal(a1, b)
    assert not np.array_equal(a1, c)


def test_stream_rejects_negative_int_key():
    with pytest.raises(ValidationError):
        Rng(0).stream("x", -1)


def test_glorot_limits():
    w = glorot_uniform(Rng(2).stream("init"), 30, 20)
    limit = math.sqrt(6.0 / 50.0)
    assert w.min() >= -limit and w.max() <= limit
    assert w.std() > limit / 4  # actually spread out, not collapsed


# ---------------------------------------------------------------------------
# mlp composite
# ---------------------------------------------------------------------------

def test_mlp_composite_gradients_match_fd():
    rng = Rng(9)
    net = Mlp((4, 6, 3), ("relu", "linear"), rng, dtype=np.float64)
    x = rng.stream("x").uniform01(5, 4, dtype=np.float64)
    targets = np.zeros((5, 3))
    targets[np.arange(5), [0, 1, 2, 0, 1]] = 1.0

    def loss_of():
        return softmax_cross_entropy(net.forward(x), targets)[0]

    logits = net.forward(x, train=True)
    _, dlogits = softmax_cross_entropy(logits, targets)
    net.backward(dlogits)
    grads = net.grad_list
    h = 1e-5
    worst = 0.0
    for p, g in zip(net.param_list(), grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            lp = loss_of()
            flat[j] = orig - h
            lm = loss_of()
            flat[j] = orig
            fd = (lp - lm) / (2 * h)
            worst = max(worst, abs(fd - gflat[j]) / max(abs(fd), abs(gflat[j]), 1e-6))
    assert worst < 1e-4


def test_mlp_sigmoid_head_stays_in_unit_interval():
    net = Mlp((3, 4, 2), ("relu", "sigmoid"), Rng(1))
    for layer in net.layers:
        layer.weights *= 50.0  # extreme weights cannot push outputs out of range
    out = net.forward(Rng(2).standard_normal(10, 3))
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_mlp_backward_requires_train_forward():
    net = Mlp((3, 2), ("linear",), Rng(0))
    net.forward(np.zeros((1, 3), dtype=np.float32))
    with pytest.raises(RuntimeError):
        net.backward(np.zeros((1, 2), dtype=np.float32))
