"""
Adam updates and the loss/metric functions.
"""
import numpy as np
import pytest

from koss_ssm.errors import ConfigError
from koss_ssm.train.autodiff import Tape, backward
from koss_ssm.train.losses import cross_entropy_value, mae, mae_loss, mse, mse_loss
from koss_ssm.train.optim import AdamState, adam_step


def test_first_adam_step_moves_by_lr():
    params = {"w": np.array([1.0, -2.0, 3.0])}
    grads = {"w": np.array([0.5, -4.0, 1e-3])}
    state = AdamState(lr=0.1)
    out = adam_step(params, grads, state)
    # bias-corrected first step is lr * sign(g) up to eps
    np.testing.assert_allclose(out["w"], params["w"] - 0.1 * np.sign(grads["w"]), atol=1e-5)
    assert state.step == 1


def test_zero_gradient_leaves_params():
    params = {"w": np.ones((2, 2))}
    out = adam_step(params, {"w": np.zeros((2, 2))}, AdamState(lr=0.1))
    np.testing.assert_array_equal(out["w"], params["w"])


def test_adam_step_is_scale_invariant():
    params = {"w": np.array([0.3, -0.7])}
    grads = {"w": np.array([2.0, -0.5])}
    small = adam_step(params, grads, AdamState(lr=0.01))
    big = adam_step(params, {"w": grads["w"] * 1000.0}, AdamState(lr=0.01))
    np.testing.assert_allclose(small["w"], big["w"], atol=1e-9)


def test_adam_minimises_quadratic():
    target = np.array([1.5, -0.5, 2.0])
    params = {"w": np.zeros(3)}
    state = AdamState(lr=0.01)
    for _ in range(3000):
        params = adam_step(params, {"w": 2.0 * (params["w"] - target)}, state)
    np.testing.assert_allclose(params["w"], target, atol=2e-2)


def test_adam_keeps_parameter_dtype():
    params = {"w": np.ones(3, dtype=np.float32)}
    out = adam_step(params, {"w": np.ones(3)}, AdamState())
    assert out["w"].dtype == np.float32


def test_adam_rejects_bad_input():
    with pytest.raises(ConfigError):
        AdamState(lr=-1.0)
    with pytest.raises(ConfigError):
        adam_step({"w": np.ones(3)}, {"w": np.ones(2)}, AdamState())


def test_mse_and_mae():
    pred = np.array([[1.0, 2.0], [3.0, 4.0]])
    target = np.array([[1.0, 0.0], [0.0, 4.0]])
    assert mse(pred, target) == pytest.approx((4.0 + 9.0) / 4)
    assert mae(pred, target) == pytest.approx((2.0 + 3.0) / 4)
    with pytest.raises(ConfigError):
        mse(pred, target[0])


def test_tape_losses_match_metrics():
    rng = np.random.default_rng(0)
    pred, target = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    tape = Tape()
    p = tape.param(pred, "pred")
    loss = mse_loss(p, target)
    assert float(loss.value) == pytest.approx(mse(pred, target))
    np.testing.assert_allclose(backward(tape, loss)["pred"], 2.0 * (pred - target) / pred.size)
    assert float(mae_loss(p, target).value) == pytest.approx(mae(pred, target))
    with pytest.raises(ConfigError):
        mse_loss(p, target[:2])


def test_cross_entropy_value():
    logits = np.log(np.array([[0.5, 0.25, 0.25]]))
    assert cross_entropy_value(logits, np.array([0])) == pytest.approx(np.log(2.0))
    assert cross_entropy_value(logits + 100.0, np.array([1])) == pytest.approx(np.log(4.0))
