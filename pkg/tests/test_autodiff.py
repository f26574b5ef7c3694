"""Tape engine basics: backward rules, accumulation, stop-gradient, grad_check."""

import numpy as np
import pytest

from siamgrid.autodiff import (
    ContractError,
    DimensionError,
    Tensor,
    backward,
    grad_check,
    matmul,
    mul,
    stop_gradient,
    tape_scope,
    tsum,
)


def _rand(shape, seed):
    return np.random.default_rng(seed).standard_normal(shape).astype(np.float32)


def test_backward_sum_gives_ones():
    with tape_scope():
        x = Tensor(_rand((3, 4), 0), requires_grad=True)
        backward(tsum(x))
    np.testing.assert_array_equal(x.grad, np.ones((3, 4), dtype=np.float32))


def test_backward_sum_of_squares_gives_2x():
    with tape_scope():
        x = Tensor(_rand((5,), 1), requires_grad=True)
        backward(tsum(mul(x, x)))
    np.testing.assert_allclose(x.grad, 2.0 * x.data, rtol=1e-6)


def test_grads_accumulate_additively_across_uses():
    with tape_scope():
        x = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
        backward(tsum(x) + tsum(x))
    np.testing.assert_array_equal(x.grad, 2.0 * np.ones(3, dtype=np.float32))


def test_backward_rejects_non_scalar_loss():
    with tape_scope():
        x = Tensor(_rand((2, 2), 2), requires_grad=True)
        y = mul(x, x)
        with pytest.raises(ContractError):
            backward(y)


def test_matmul_shape_mismatch_names_shapes():
    a = Tensor(_rand((2, 3), 3))
    b = Tensor(_rand((4, 2), 4))
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 2\)"):
        matmul(a, b)


def test_broadcast_add_backward_reduces_correctly():
    with tape_scope():
        x = Tensor(_rand((4, 3), 5), requires_grad=True)
        b = Tensor(_rand((3,), 6), requires_grad=True)
        backward(tsum(x + b))
    np.testing.assert_array_equal(x.grad, np.ones((4, 3), dtype=np.float32))
    np.testing.assert_array_equal(b.grad, 4.0 * np.ones(3, dtype=np.float32))


def test_forward_is_deterministic():
    x = Tensor(_rand((8, 8), 7))
    w = Tensor(_rand((8, 8), 8))
    first = matmul(x, w).data.copy()
    second = matmul(x, w).data
    np.testing.assert_array_equal(first, second)


# -- stop_gradient ----------------------------------------------------------

def test_stop_gradient_forward_is_bit_identical():
    x = Tensor(_rand((3, 3), 9), requires_grad=True)
    y = stop_gradient(x)
    assert y.data is x.data
    assert not y.requires_grad


def test_stop_gradient_blocks_all_gradient():
    with tape_scope():
        x = Tensor(_rand((5,), 10), requires_grad=True)
        backward(tsum(stop_gradient(x)) + 0.0 * tsum(x))
    np.testing.assert_array_equal(x.grad, np.zeros(5, dtype=np.float32))


def test_stop_gradient_product_rule():
    # y = x * sg(x): dy/dx equals the (stopped) value of x, not 2x.
    # Oracle: central finite differences with the stopped operand held constant.
    x = Tensor(_rand((6,), 11), requires_grad=True)
    frozen = Tensor(x.data.copy())
    err = grad_check(lambda t: tsum(mul(t, frozen)), x)
    assert err < 1e-3
    x.zero_grad()
    with tape_scope():
        backward(tsum(mul(x, stop_gradient(x))))
    np.testing.assert_allclose(x.grad, x.data, rtol=1e-6)


# -- grad_check harness ------------------------------------------------------

def test_grad_check_constant_function_is_zero():
    x = Tensor(_rand((4,), 12), requires_grad=True)
    assert grad_check(lambda t: tsum(mul(t, 0.0)), x) == 0.0


def test_grad_check_relu_away_from_kink():
    x = Tensor(np.abs(_rand((10,), 13)) + 0.5, requires_grad=True)
    assert grad_check(lambda t: tsum(t.relu()), x) < 1e-3


def test_grad_check_rejects_bad_eps():
    x = Tensor(_rand((2,), 14), requires_grad=True)
    with pytest.raises(ContractError):
        grad_check(lambda t: tsum(t), x, eps=1.0)


def test_grad_check_rejects_non_scalar_function():
    x = Tensor(_rand((2,), 15), requires_grad=True)
    with pytest.raises(ContractError):
        grad_check(lambda t: mul(t, t), x)


def test_linear_gradient_against_handrolled_fd():
    # independent of grad_check: explicit central-difference loop
    rng = np.random.default_rng(16)
    x = Tensor(rng.standard_normal((3, 4)).astype(np.float32), requires_grad=True)
    w = rng.standard_normal((2, 4)).astype(np.float32)

    def f(xv):
        return float((xv @ w.T).sum())

    with tape_scope():
        xt = Tensor(x.data, requires_grad=True)
        backward(tsum(matmul(xt, Tensor(w.T))))
    eps = 1e-3
    fd = np.zeros_like(x.data, dtype=np.float64)
    for i in range(x.data.shape[0]):
        for j in range(x.data.shape[1]):
            hi = x.data.copy()
            hi[i, j] += eps
            lo = x.data.copy()
            lo[i, j] -= eps
            fd[i, j] = (f(hi) - f(lo)) / (2 * eps)
    rel = np.abs(xt.grad - fd) / np.maximum(np.abs(fd), 1e-8)
    assert rel.max() < 1e-3
