"""SGD update rule and cosine schedule against hand-derived values."""

import math

import numpy as np
import pytest

from siamgrid.autodiff import ContractError, Parameter
from siamgrid.optim import CosineSchedule, SgdState, cosine_lr, sgd_step


def _param(values, grad=None, requires_grad=True):
    p = Parameter(np.asarray(values, dtype=np.float32))
    p.requires_grad = requires_grad
    if grad is not None:
        p.grad = np.asarray(grad, dtype=np.float32)
    return p


def test_zero_grad_zero_buffer_no_decay_leaves_params():
    p = _param([1.0, -2.0], grad=[0.0, 0.0])
    params = {"w": p}
    state = SgdState(params, momentum=0.9, weight_decay=0.0)
    sgd_step(params, state, lr_t=0.1)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_vanilla_sgd_single_step():
    p = _param([1.0, 1.0], grad=[0.5, -0.5])
    params = {"w": p}
    state = SgdState(params, momentum=0.0, weight_decay=0.0)
    sgd_step(params, state, lr_t=0.2)
    np.testing.assert_allclose(p.data, [1.0 - 0.2 * 0.5, 1.0 + 0.2 * 0.5], rtol=1e-6)


def test_momentum_two_steps_hand_recursion():
    # constant grad g: buf1 = g, buf2 = 1.9 g -> second delta is -lr*1.9*g
    g = np.array([1.0], dtype=np.float32)
    p = _param([0.0], grad=g)
    params = {"w": p}
    state = SgdState(params, momentum=0.9, weight_decay=0.0)
    lr = 0.1
    sgd_step(params, state, lr_t=lr)
    after_first = p.data.copy()
    p.grad = g.copy()
    sgd_step(params, state, lr_t=lr)
    delta2 = p.data - after_first
    np.testing.assert_allclose(delta2, -lr * 1.9 * g, rtol=1e-6)


def test_weight_decay_enters_gradient():
    p = _param([2.0], grad=[0.0])
    params = {"w": p}
    state = SgdState(params, momentum=0.0, weight_decay=0.1)
    sgd_step(params, state, lr_t=1.0)
    np.testing.assert_allclose(p.data, [2.0 - 0.1 * 2.0], rtol=1e-6)


def test_missing_grad_names_parameter():
    p = _param([1.0])
    params = {"encoder.stem.weight": p}
    state = SgdState(params)
    with pytest.raises(ContractError, match="encoder.stem.weight"):
        sgd_step(params, state, lr_t=0.1)


def test_frozen_params_untouched_and_need_no_grad():
    p = _param([1.0], requires_grad=False)
    params = {"w": p}
    state = SgdState(params)
    sgd_step(params, state, lr_t=0.1)
    np.testing.assert_array_equal(p.data, [1.0])


def test_zero_lr_is_bit_exact_noop_on_params():
    p = _param([0.12345678], grad=[3.3])
    params = {"w": p}
    state = SgdState(params, momentum=0.9, weight_decay=1e-4)
    before = p.data.copy()
    sgd_step(params, state, lr_t=0.0)
    assert np.array_equal(p.data, before)


def test_probe_hyperparameters_are_pure_momentum():
    # wd=0 probing: the update must equal the wd-free momentum recursion
    rng = np.random.default_rng(0)
    values = rng.standard_normal(8).astype(np.float32)
    grads = [rng.standard_normal(8).astype(np.float32) for _ in range(3)]

    p = _param(values.copy())
    params = {"w": p}
    state = SgdState(params, momentum=0.9, weight_decay=0.0)
    manual = values.astype(np.float64).copy()
    buf = np.zeros(8)
    lr = 30.0
    for g in grads:
        p.grad = g.copy()
        sgd_step(params, state, lr_t=lr)
        buf = 0.9 * buf + g
        manual = manual - lr * buf
    np.testing.assert_allclose(p.data, manual.astype(np.float32), rtol=1e-4)


def test_state_arrays_round_trip():
    p = _param([1.0, 2.0], grad=[0.1, 0.2])
    params = {"w": p}
    state = SgdState(params, momentum=0.9)
    sgd_step(params, state, lr_t=0.5)
    saved = {k: v.copy() for k, v in state.state_arrays().items()}

    fresh = SgdState(params, momentum=0.9)
    fresh.load_arrays(saved)
    np.testing.assert_array_equal(fresh.buffers["w"], state.buffers["w"])


# -- cosine schedule -----------------------------------------------------------

def test_cosine_endpoints_and_midpoint():
    sched = CosineSchedule(base_lr=0.05, total_steps=100, min_lr=0.0)
    assert cosine_lr(sched, 0) == pytest.approx(0.05, abs=1e-15)
    assert cosine_lr(sched, 100) == pytest.approx(0.0, abs=1e-15)
    assert cosine_lr(sched, 50) == pytest.approx(0.025, abs=1e-15)


def test_cosine_closed_form_quarter_points():
    base, minimum, total = 0.4, 0.04, 64
    sched = CosineSchedule(base_lr=base, total_steps=total, min_lr=minimum)
    for t in (0, total // 4, total // 2, 3 * total // 4, total):
        expected = minimum + 0.5 * (base - minimum) * (1 + math.cos(math.pi * t / total))
        assert abs(cosine_lr(sched, t) - expected) < 1e-12


def test_cosine_monotone_non_increasing():
    sched = CosineSchedule(base_lr=1.0, total_steps=257, min_lr=0.001)
    values = [cosine_lr(sched, t) for t in range(258)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_cosine_rejects_out_of_range_t():
    sched = CosineSchedule(base_lr=0.1, total_steps=10)
    with pytest.raises(ContractError):
        cosine_lr(sched, 11)
    with pytest.raises(ContractError):
        cosine_lr(sched, -1)
