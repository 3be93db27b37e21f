import numpy as np
import pytest

import irisynth.tensor as tc
from irisynth.tensor import AdamState, ShapeError, Tensor, adam_step


def test_conv2d_all_ones():
    x = Tensor(np.ones((1, 1, 3, 3)))
    w = Tensor(np.ones((1, 1, 2, 2)))
    b = Tensor(np.zeros(1))
    out = tc.conv2d(x, w, b)
    assert out.shape == (1, 1, 2, 2)
    assert np.allclose(out.data, 4.0)


def test_conv2d_identity_kernel():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(2, 1, 6, 7)))
    w = Tensor(np.ones((1, 1, 1, 1)))
    b = Tensor(np.zeros(1))
    out = tc.conv2d(x, w, b)
    assert np.array_equal(out.data, x.data)


def test_conv2d_output_extent():
    x = Tensor(np.zeros((1, 3, 8, 8)))
    w = Tensor(np.zeros((4, 3, 5, 5)))
    out = tc.conv2d(x, w, Tensor(np.zeros(4)), stride=2, padding=2)
    assert out.shape == (1, 4, 4, 4)


def test_conv2d_shape_errors():
    x = Tensor(np.zeros((1, 3, 8, 8)))
    with pytest.raises(ShapeError, match="channel mismatch"):
        tc.conv2d(x, Tensor(np.zeros((4, 2, 5, 5))), Tensor(np.zeros(4)))
    with pytest.raises(ShapeError, match="bias"):
        tc.conv2d(x, Tensor(np.zeros((4, 3, 5, 5))), Tensor(np.zeros(3)))


def test_conv_transpose_doubles_extent():
    x = Tensor(np.zeros((1, 2, 4, 4)))
    w = Tensor(np.zeros((2, 3, 5, 5)))
    out = tc.conv_transpose2d(x, w, Tensor(np.zeros(3)), stride=2, padding=2,
                              output_padding=1)
    assert out.shape == (1, 3, 8, 8)


def test_conv_transpose_identity_kernel():
    rng = np.random.default_rng(1)
    x = Tensor(rng.normal(size=(2, 1, 5, 5)))
    w = Tensor(np.ones((1, 1, 1, 1)))
    out = tc.conv_transpose2d(x, w, Tensor(np.zeros(1)))
    assert np.array_equal(out.data, x.data)


def test_conv_transpose_output_padding_bound():
    x = Tensor(np.zeros((1, 1, 4, 4)))
    w = Tensor(np.zeros((1, 1, 5, 5)))
    with pytest.raises(ValueError, match="output_padding"):
        tc.conv_transpose2d(x, w, Tensor(np.zeros(1)), stride=2, padding=2,
                            output_padding=2)


def test_conv_then_transpose_restores_extent():
    rng = np.random.default_rng(2)
    for size in (8, 16, 32):
        x = Tensor(rng.normal(size=(1, 2, size, size)))
        w = Tensor(rng.normal(size=(3, 2, 5, 5)))
        down = tc.conv2d(x, w, Tensor(np.zeros(3)), stride=2, padding=2)
        wt = Tensor(rng.normal(size=(3, 2, 5, 5)))
        up = tc.conv_transpose2d(down, wt, Tensor(np.zeros(2)), stride=2,
                                 padding=2, output_padding=1)
        assert up.shape == (1, 2, size, size)


def test_batchnorm_normalizes():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(2.0, 3.0, size=(8, 2, 4, 4)))
    out = tc.batchnorm2d(x, Tensor(np.ones(2)), Tensor(np.zeros(2)),
                         np.zeros(2), np.ones(2), training=True)
    mean = out.data.mean(axis=(0, 2, 3))
    var = out.data.var(axis=(0, 2, 3))
    assert np.all(np.abs(mean) < 1e-6)
    assert np.all(np.abs(var - 1.0) < 1e-5)


def test_batchnorm_affine():
    rng = np.random.default_rng(4)
    x = Tensor(rng.normal(size=(8, 2, 4, 4)))
    out = tc.batchnorm2d(x, Tensor(np.full(2, 2.0)), Tensor(np.full(2, 3.0)),
                         np.zeros(2), np.ones(2), training=True)
    assert np.allclose(out.data.mean(axis=(0, 2, 3)), 3.0, atol=1e-6)
    assert np.allclose(out.data.std(axis=(0, 2, 3)), 2.0, atol=1e-4)


def test_batchnorm_rejects_batch_of_one():
    x = Tensor(np.zeros((1, 2, 4, 4)))
    with pytest.raises(ValueError, match="batch size"):
        tc.batchnorm2d(x, Tensor(np.ones(2)), Tensor(np.zeros(2)),
                       np.zeros(2), np.ones(2), training=True)


def test_batchnorm_running_stats_and_eval():
    rng = np.random.default_rng(5)
    x = rng.normal(1.0, 2.0, size=(16, 1, 8, 8))
    rm, rv = np.zeros(1), np.ones(1)
    for _ in range(50):
        tc.batchnorm2d(Tensor(x), Tensor(np.ones(1)), Tensor(np.zeros(1)),
                       rm, rv, training=True)
    assert abs(rm[0] - x.mean()) < 0.05
    assert abs(rv[0] - x.var()) < 0.2
    out = tc.batchnorm2d(Tensor(x), Tensor(np.ones(1)), Tensor(np.zeros(1)),
                         rm, rv, training=False)
    assert abs(out.data.mean()) < 0.05


def test_activation_values():
    x = Tensor(np.array([[-1.0, 0.0, 2.0]]))
    assert np.allclose(tc.relu(x).data, [[0.0, 0.0, 2.0]])
    assert np.allclose(tc.leaky_relu(x, 0.2).data, [[-0.2, 0.0, 2.0]])
    assert tc.sigmoid(Tensor(np.zeros((1, 1)))).data[0, 0] == 0.5
    assert tc.tanh(Tensor(np.zeros((1, 1)))).data[0, 0] == 0.0


def test_dense_shape_error():
    with pytest.raises(ShapeError):
        tc.dense(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))),
                 Tensor(np.zeros(2)))


def test_backward_sum_gives_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    x.sum().backward()
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_backward_power_rule():
    x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    (x * x).sum().backward()
    assert np.allclose(x.grad, [2.0, 4.0, 6.0])


def test_backward_rejects_nonscalar():
    x = Tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        (x * 2.0).backward()


def test_backward_accumulates_across_calls():
    x = Tensor(np.array([2.0]), requires_grad=True)
    loss = (x * x).sum()
    loss.backward()
    loss.backward()
    assert np.allclose(x.grad, [8.0])
    x.zero_grad()
    (x * x).sum().backward()
    assert np.allclose(x.grad, [4.0])


def test_elementwise_shape_mismatch():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((2, 3))) + Tensor(np.zeros((3, 2)))


def test_adam_first_step():
    w = Tensor(np.zeros(1), requires_grad=True)
    w.grad = np.ones(1)
    state = AdamState(learning_rate=2e-4)
    adam_step({"w": w}, state)
    # bias-corrected first step is exactly -lr * g / (|g| + eps)
    assert abs(w.data[0] + 2e-4) < 1e-8
    assert state.step == 1


def test_adam_ignores_missing_grad():
    w = Tensor(np.full(3, 1.5), requires_grad=True)
    adam_step({"w": w}, AdamState())
    assert np.array_equal(w.data, np.full(3, 1.5))


def test_adam_converges_on_quadratic():
    w = Tensor(np.zeros(1), requires_grad=True)
    state = AdamState(learning_rate=0.05, beta1=0.9)
    for _ in range(200):
        w.zero_grad()
        diff = w - 3.0
        (diff * diff).sum().backward()
        adam_step({"w": w}, state)
    assert abs(w.data[0] - 3.0) < 0.1


def test_adam_rejects_nonfinite_gradient():
    w = Tensor(np.zeros(1), requires_grad=True)
    w.grad = np.array([np.nan])
    with pytest.raises(FloatingPointError, match="'w'"):
        adam_step({"w": w}, AdamState())


def test_deterministic_forward_backward():
    def run():
        rng = np.random.default_rng(42)
        x = Tensor(rng.normal(size=(2, 2, 8, 8)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 2, 5, 5)), requires_grad=True)
        out = tc.conv2d(x, w, Tensor(np.zeros(3)), stride=2, padding=2)
        loss = (tc.tanh(out) * tc.tanh(out)).sum()
        loss.backward()
        return loss.data.copy(), x.grad.copy(), w.grad.copy()

    a = run()
    b = run()
    assert all(np.array_equal(u, v) for u, v in zip(a, b))
