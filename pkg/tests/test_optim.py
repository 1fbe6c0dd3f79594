import numpy as np
import pytest

from csprivacy.nn.optim import AdamState, PlateauSchedule, TrainSchedule, adam_step, replay_schedule


def test_adam_first_step_closed_form():
    params = {"p": np.array([1.0])}
    state = AdamState()
    adam_step(params, {"p": np.array([1.0])}, state, 1e-3)
    # m_hat = v_hat = 1 after bias correction: step = lr / (1 + eps)
    step = 1.0 - params["p"][0]
    assert step == pytest.approx(1e-3 / (1 + 1e-8), rel=1e-9)
    assert abs(step - 1e-3) <= 1e-3 * 1e-8 + 1e-15
    assert state.t == 1


def test_adam_zero_gradient():
    params = {"w": np.arange(3.0)}
    state = AdamState()
    adam_step(params, {"w": np.zeros(3)}, state, 0.1)
    assert np.array_equal(params["w"], np.arange(3.0))
    assert state.t == 1


def test_adam_quadratic_converges():
    params = {"p": np.array(1.0)}
    state = AdamState()
    for _ in range(500):
        adam_step(params, {"p": 2 * params["p"]}, state, 0.1)
    assert abs(params["p"]) < 1e-3


def test_adam_skips_non_finite():
    params = {"p": np.array([1.0, 2.0])}
    state = AdamState()
    adam_step(params, {"p": np.array([np.nan, 1.0])}, state, 0.1)
    assert params["p"].tolist() == [1.0, 2.0]
    assert state.t == 0 and state.skipped == 1


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step({"p": np.zeros(2)}, {"p": np.zeros(3)}, AdamState(), 0.1)
    with pytest.raises(ValueError):
        adam_step({"p": np.zeros(2)}, {"q": np.zeros(2)}, AdamState(), 0.1)


def test_schedule_validation():
    with pytest.raises(ValueError):
        TrainSchedule(factor=1.0)
    with pytest.raises(ValueError):
        TrainSchedule(stop_patience=0)


def test_decreasing_never_drops():
    lrs, drops, stop = replay_schedule([1.0 / (i + 1) for i in range(100)])
    assert drops == [] and stop is None and set(lrs) == {1e-3}


def test_plateau_drop_and_stop():
    e = 5
    seq = [10.0 - i for i in range(e)] + [10.0 - e + 1] * 40
    lrs, drops, stop = replay_schedule(seq)
    assert drops[0] == e + 10
    assert lrs[e + 8] == 1e-3 and lrs[e + 9] == pytest.approx(1e-4)
    assert stop == e + 22


def test_improvement_resets_counters():
    sched = PlateauSchedule(TrainSchedule())
    sched.observe(1.0)
    for _ in range(9):
        sched.observe(2.0)
    sched.observe(0.5)  # new best at epoch 11
    for _ in range(9):
        sched.observe(0.5)
    assert sched.drops == [] and sched.lr == 1e-3
    sched.observe(0.7)
    assert sched.drops == [21]
