import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from sephrnet.autodiff import (
    Tensor,
    concat,
    exp,
    get_default_dtype,
    grad_check,
    log,
    log_softmax,
    matmul,
    no_grad,
    relu,
    set_default_dtype,
    sigmoid,
    softmax,
    stack,
    tanh,
)
from sephrnet.exceptions import ConfigurationError, GraphError, UsageError


def leaf(rng, *shape, low=None):
    data = rng.normal(size=shape)
    if low is not None:
        data = np.abs(data) + low
    return Tensor(data, requires_grad=True)


@pytest.mark.parametrize("seed", range(5))
def test_elementwise_grads(seed):
    rng = np.random.default_rng(seed)
    a, b = leaf(rng, 3, 4), leaf(rng, 4)
    assert grad_check(lambda a, b: (a * b + a / (b * b + 1.0) - b).sum(), [a, b]) < 1e-6
    p = leaf(rng, 3, 4, low=0.5)
    assert grad_check(lambda p: (log(p) + exp(p * 0.3) + p**1.5).sum(), [p]) < 1e-6
    x = leaf(rng, 5, 3)
    assert grad_check(lambda x: (sigmoid(x) * tanh(x)).sum(), [x]) < 1e-6


def test_relu_grad_away_from_kink(rng):
    x = Tensor(rng.choice([-1, 1], size=(4, 5)) * (0.1 + rng.random((4, 5))), requires_grad=True)
    assert grad_check(lambda x: (relu(x) * relu(x)).sum(), [x]) < 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_reductions_and_softmax_grads(seed):
    rng = np.random.default_rng(seed)
    x = leaf(rng, 2, 3, 4)
    w = Tensor(rng.normal(size=(2, 3, 4)))
    assert grad_check(lambda x: (softmax(x, axis=1) * w).sum(), [x]) < 1e-6
    assert grad_check(lambda x: (log_softmax(x, axis=-1) * w).sum(), [x]) < 1e-6
    assert grad_check(lambda x: (x.mean(axis=(0, 2)) * x.sum(axis=(0, 2))).sum(), [x]) < 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_matmul_and_shape_grads(seed):
    rng = np.random.default_rng(seed)
    a, b = leaf(rng, 2, 3, 4), leaf(rng, 4, 5)
    assert grad_check(lambda a, b: (matmul(a, b) ** 2).sum(), [a, b]) < 1e-6
    x = leaf(rng, 2, 3, 4)
    assert grad_check(lambda x: (x.transpose(2, 0, 1).reshape(4, 6)[1:, ::2] ** 2).sum(), [x]) < 1e-6
    assert grad_check(lambda x: (x[:, [0, 2, 2]] ** 2).sum(), [x]) < 1e-6
    y = leaf(rng, 2, 1, 4)
    assert grad_check(lambda x, y: (concat([x, y], axis=1) ** 2).sum() + (stack([x, x], 0) * 0.5).sum(), [x, y]) < 1e-6


def test_matmul_matches_naive_loops(rng):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    expected = np.array([[sum(a[i, k] * b[k, j] for k in range(4)) for j in range(2)] for i in range(3)])
    np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, expected, rtol=1e-12)


def test_broadcast_gradient_is_summed():
    a = Tensor(np.ones((3, 4)), requires_grad=True)
    b = Tensor(np.ones(4), requires_grad=True)
    (a * b).sum().backward()
    np.testing.assert_array_equal(b.grad, np.full(4, 3.0))


def test_shared_subexpression_accumulates():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * x
    (y + y).sum().backward()
    np.testing.assert_array_equal(x.grad, [8.0])


def test_second_backward_raises():
    x = Tensor(np.ones(3), requires_grad=True)
    y = (x * 2).sum()
    y.backward()
    with pytest.raises(GraphError):
        y.backward()


def test_backward_needs_scalar_or_seed():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises((UsageError, GraphError, ConfigurationError)):
        (x * 2).backward()


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = (x * 2).sum()
    assert not y.requires_grad


def test_softmax_stable_for_large_logits():
    x = Tensor(np.array([1000.0, 1000.0, -1000.0]))
    np.testing.assert_allclose(softmax(x).data, [0.5, 0.5, 0.0])
    assert np.isfinite(log_softmax(x).data[:2]).all()


def test_bad_axis_rejected():
    with pytest.raises(ConfigurationError):
        Tensor(np.ones((2, 2))).sum(axis=3)


def test_default_dtype_switch():
    set_default_dtype(np.float32)
    try:
        assert Tensor([1.0, 2.0]).dtype == np.float32
        assert get_default_dtype() == np.float32
    finally:
        set_default_dtype(np.float64)


def test_grad_check_contract():
    x = Tensor(np.ones(3))
    with pytest.raises(UsageError):
        grad_check(lambda x: x * 2, [x])
    with pytest.raises(UsageError):
        grad_check(lambda x: x.sum(), [x], eps=1e-1)


def test_grad_check_catches_a_wrong_gradient():
    from sephrnet.autodiff.tensor import _node

    def bad_square(x):
        return _node(x.data**2, (x,), lambda g: (g * x.data,))  # missing factor 2

    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    assert grad_check(lambda x: bad_square(x).sum(), [x]) > 0.1


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=5), elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one(arr):
    p = softmax(Tensor(arr), axis=-1).data
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)
    assert (p >= 0).all()
