"""AdamW update rule against hand-unrolled first steps."""

import numpy as np
import pytest

from viewtad.optim import AdamWState, adamw_step, clip_grad_norm
from viewtad.tensor import Tensor


def _state(lr=0.1, wd=0.0):
    return AdamWState(lr=lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=wd)


def test_zero_gradient_no_decay_leaves_params_unchanged():
    p = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    adamw_step(_state(), {"p": p}, {"p": np.zeros(2)})
    np.testing.assert_array_equal(p.data, [1.5, -2.0])


def test_first_step_hand_unroll():
    # m_hat = v_hat = 1 after bias correction, so the step is lr/(1+eps)
    p = Tensor(np.array([1.0]), requires_grad=True)
    adamw_step(_state(lr=0.1), {"p": p}, {"p": np.array([1.0])})
    expected = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8)
    assert p.data[0] == pytest.approx(expected, abs=1e-15)
    assert p.data[0] == pytest.approx(0.9, abs=1e-6)


def test_first_step_with_decoupled_decay():
    p = Tensor(np.array([1.0]), requires_grad=True)
    adamw_step(_state(lr=0.1, wd=0.01), {"p": p}, {"p": np.array([1.0])})
    expected = (1.0 - 0.1 * 0.01) - 0.1 * 1.0 / (1.0 + 1e-8)
    assert p.data[0] == pytest.approx(expected, abs=1e-15)
    assert p.data[0] == pytest.approx(0.899, abs=1e-6)


def test_step_counter_and_moments_track_shapes():
    p = Tensor(np.ones((2, 3)), requires_grad=True)
    state = _state()
    for step in range(1, 4):
        adamw_step(state, {"p": p}, {"p": np.full((2, 3), 0.5)})
        assert state.step == step
    assert state.m["p"].shape == (2, 3)
    assert state.v["p"].shape == (2, 3)


def test_shape_mismatch_rejected():
    p = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="shape"):
        adamw_step(_state(), {"p": p}, {"p": np.ones(4)})


def test_frozen_parameter_rejected():
    p = Tensor(np.ones(3), requires_grad=False)
    with pytest.raises(ValueError, match="frozen"):
        adamw_step(_state(), {"p": p}, {"p": np.ones(3)})


def test_missing_gradient_rejected():
    p = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(KeyError, match="no gradient"):
        adamw_step(_state(), {"p": p}, {})


def test_clip_grad_norm_scales_in_place():
    grads = {"a": np.array([3.0, 0.0]), "b": np.array([0.0, 4.0])}
    norm = clip_grad_norm(grads, 2.5)
    assert norm == pytest.approx(5.0)
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    assert total == pytest.approx(2.5)


def test_clip_grad_norm_leaves_small_gradients_alone():
    grads = {"a": np.array([0.3])}
    clip_grad_norm(grads, 5.0)
    assert grads["a"][0] == pytest.approx(0.3)
