"""AdamW single-step oracles, decoupled decay, clipping, non-finite rejection."""

import numpy as np
import pytest

from duetdiff import tensor as tz
from duetdiff.optim import AdamWState, adamw_step, clip_grad_norm


def make_param(value, name="p"):
    return {name: tz.Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)}


def test_first_step_moves_by_lr():
    # grad 1, fresh moments: mhat=1, vhat=1 -> update ~ -lr (eps-sized error)
    params = make_param([1.0])
    state = AdamWState(weight_decay=0.0)
    adamw_step(params, {"p": np.array([1.0])}, state, lr=0.1)
    expect = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8))
    assert params["p"].data[0] == pytest.approx(expect, abs=1e-15)
    assert params["p"].data[0] == pytest.approx(0.9, abs=1e-8)
    assert state.step == 1


def test_decay_only_multiplies():
    # zero grad: moments stay zero, only decoupled decay applies
    params = make_param([2.0])
    state = AdamWState(weight_decay=0.01)
    adamw_step(params, {"p": np.array([0.0])}, state, lr=0.5)
    assert params["p"].data[0] == pytest.approx(2.0 * (1.0 - 0.5 * 0.01), abs=1e-15)


def test_decay_is_decoupled_from_moments():
    # with decay, the gradient path must not see the decay term
    params_a = make_param([1.0])
    state_a = AdamWState(weight_decay=0.0)
    adamw_step(params_a, {"p": np.array([1.0])}, state_a, lr=0.1)
    params_b = make_param([1.0])
    state_b = AdamWState(weight_decay=0.01)
    adamw_step(params_b, {"p": np.array([1.0])}, state_b, lr=0.1)
    diff = params_a["p"].data[0] - params_b["p"].data[0]
    assert diff == pytest.approx(0.1 * 0.01 * 1.0, abs=1e-15)


def test_two_steps_match_manual_recurrence():
    b1, b2, eps = 0.9, 0.999, 1e-8
    grads = [np.array([0.3]), np.array([-0.7])]
    params = make_param([0.5])
    state = AdamWState(weight_decay=0.0)
    x = 0.5
    m = v = 0.0
    for k, g in enumerate(grads, start=1):
        adamw_step(params, {"p": g.copy()}, state, lr=0.01)
        m = b1 * m + (1 - b1) * g[0]
        v = b2 * v + (1 - b2) * g[0] ** 2
        mhat = m / (1 - b1**k)
        vhat = v / (1 - b2**k)
        x -= 0.01 * mhat / (np.sqrt(vhat) + eps)
        assert params["p"].data[0] == pytest.approx(x, abs=1e-14)


def test_nonfinite_gradient_rejected_whole_step():
    params = {
        "a": tz.Tensor(np.array([1.0]), requires_grad=True, name="a"),
        "b": tz.Tensor(np.array([2.0]), requires_grad=True, name="b"),
    }
    state = AdamWState()
    grads = {"a": np.array([1.0]), "b": np.array([np.nan])}
    with pytest.raises(RuntimeError, match="b"):
        adamw_step(params, grads, state, lr=0.1)
    # nothing moved, no state advanced
    assert params["a"].data[0] == 1.0
    assert params["b"].data[0] == 2.0
    assert state.step == 0
    assert not state.m


def test_inf_gradient_rejected():
    params = make_param([1.0])
    state = AdamWState()
    with pytest.raises(RuntimeError, match="p"):
        adamw_step(params, {"p": np.array([np.inf])}, state, lr=0.1)


def test_clip_grad_norm_oracle():
    grads = {"x": np.array([3.0]), "y": np.array([4.0])}
    clipped, norm = clip_grad_norm(grads, max_norm=1.0)
    assert norm == pytest.approx(5.0)
    np.testing.assert_allclose(clipped["x"], [0.6])
    np.testing.assert_allclose(clipped["y"], [0.8])
    total = np.sqrt(sum((g**2).sum() for g in clipped.values()))
    assert total == pytest.approx(1.0)


def test_clip_grad_norm_passthrough_below_threshold():
    grads = {"x": np.array([0.3, 0.4])}
    clipped, norm = clip_grad_norm(grads, max_norm=1.0)
    assert norm == pytest.approx(0.5)
    np.testing.assert_allclose(clipped["x"], grads["x"])


def test_state_moments_match_param_shapes():
    params = {"w": tz.Tensor(np.zeros((3, 2)), requires_grad=True, name="w")}
    state = AdamWState()
    adamw_step(params, {"w": np.ones((3, 2))}, state, lr=0.1)
    assert state.m["w"].shape == (3, 2)
    assert state.v["w"].shape == (3, 2)
