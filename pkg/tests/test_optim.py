import numpy as np
import pytest

from morphoreg.nn import Conv3D, MaxPool3D, NetworkSpec, ReLU, ResBlock, build_model
from morphoreg.optim import (
    Adam,
    BestSelector,
    CyclicSchedule,
    NonFiniteGradientError,
    SGD,
    SwaAccumulator,
    cyclic_lr,
)
from morphoreg.validation import ValidationError


def small_state(seed=0):
    spec = NetworkSpec(
        n_outputs=2,
        input_dims=(8, 8, 8),
        stem=(Conv3D(1, 2, 3, 1), ReLU(), MaxPool3D(2, 2)),
        stages=((ResBlock(2, 1),),),
    ).validate()
    return build_model(spec, seed=seed)


def zero_grads(state):
    return {name: np.zeros(t.shape, dtype=np.float32) for name, t in state.params.items()}


# ---------------------------------------------------------------------------
# Adam


def test_adam_zero_gradients_leave_parameters_unchanged():
    state = small_state()
    before = state.flatten()
    opt = Adam(state, lr=0.5)
    for _ in range(25):
        opt.step(zero_grads(state))
    np.testing.assert_array_equal(state.flatten(), before)


def test_adam_first_step_magnitude_approaches_lr():
    # single scalar parameter with constant gradient: after bias correction
    # the first update is exactly -lr * sign(g)
    spec = NetworkSpec(
        n_outputs=1,
        input_dims=(4, 4, 4),
        stem=(),
        stages=((ResBlock(1, 1),),),
    ).validate()
    state = build_model(spec, seed=0)
    opt = Adam(state, lr=0.1, eps=0.0)
    before = state.flatten()
    grads = {n: np.full(t.shape, 2.5, dtype=np.float32) for n, t in state.params.items()}
    opt.step(grads)
    delta = state.flatten() - before
    np.testing.assert_allclose(delta, -0.1, rtol=1e-5)


def test_adam_converges_on_scalar_quadratic():
    # f(w) = (w - 3)^2 from w = 0 with lr = 0.1, compared against the
    # plain float64 Adam recursion
    w = 0.0
    m = v = 0.0
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    for t in range(1, 101):
        g = 2.0 * (w - 3.0)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    assert abs(w - 3.0) < 0.1


def test_adam_matches_reference_recursion_on_model_state():
    state = small_state(seed=1)
    name = "stage0.block0.conv1.weight"
    opt = Adam(state, lr=0.05)
    rng = np.random.default_rng(2)
    g_fixed = {n: rng.normal(size=t.shape).astype(np.float32) for n, t in state.params.items()}
    w_ref = state[name].data.astype(np.float64).copy()
    m = np.zeros_like(w_ref)
    v = np.zeros_like(w_ref)
    for t in range(1, 11):
        opt.step(g_fixed)
        g = g_fixed[name].astype(np.float64)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w_ref -= 0.05 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    np.testing.assert_allclose(state[name].data, w_ref, atol=1e-5)


def test_adam_rejects_non_finite_gradient_naming_parameter():
    state = small_state()
    before = state.flatten()
    opt = Adam(state)
    grads = zero_grads(state)
    grads["alpha"][0, 0] = np.nan
    with pytest.raises(NonFiniteGradientError) as err:
        opt.step(grads)
    assert "alpha" in str(err.value)
    np.testing.assert_array_equal(state.flatten(), before)  # step rejected atomically
    assert opt.t == 0


def test_adam_step_counter_strictly_increases():
    state = small_state()
    opt = Adam(state)
    for expected in range(1, 6):
        opt.step(zero_grads(state))
        assert opt.t == expected


# ---------------------------------------------------------------------------
# Cyclic schedule


def test_cyclic_lr_endpoints_and_periodicity():
    sched = CyclicSchedule(cycle_len=40)
    assert cyclic_lr(0, sched) == 1e-2
    assert cyclic_lr(39, sched) == pytest.approx(1e-6)
    assert cyclic_lr(40, sched) == 1e-2  # start of cycle 2
    for step in range(200):
        assert cyclic_lr(step, sched) == cyclic_lr(step + sched.cycle_len, sched)


def test_cyclic_lr_bounded_and_linear():
    sched = CyclicSchedule(cycle_len=11, lr_max=1e-2, lr_min=1e-6)
    values = [cyclic_lr(s, sched) for s in range(11)]
    assert all(1e-6 <= v <= 1e-2 for v in values)
    diffs = np.diff(values)
    np.testing.assert_allclose(diffs, diffs[0], rtol=1e-9)


def test_cyclic_schedule_rejects_short_cycle():
    with pytest.raises(ValidationError):
        CyclicSchedule(cycle_len=1)
    with pytest.raises(ValidationError):
        cyclic_lr(-1, CyclicSchedule(cycle_len=4))


# ---------------------------------------------------------------------------
# SWA accumulator


def test_swa_single_snapshot_is_identity():
    acc = SwaAccumulator()
    snap = np.array([1.0, -2.0, 3.5])
    acc.absorb(snap)
    np.testing.assert_array_equal(acc.mean, snap)


def test_swa_two_snapshots_average():
    acc = SwaAccumulator()
    acc.absorb(np.zeros(4))
    acc.absorb(np.full(4, 2.0))
    np.testing.assert_array_equal(acc.mean, np.ones(4))


def test_swa_mean_matches_direct_summation():
    rng = np.random.default_rng(3)
    for count in range(1, 21):
        acc = SwaAccumulator()
        snaps = [rng.normal(size=50) for _ in range(count)]
        for s in snaps:
            acc.absorb(s)
        direct = sum(snaps) / count
        np.testing.assert_allclose(acc.mean, direct, rtol=1e-6)


def test_swa_rejects_length_mismatch():
    acc = SwaAccumulator()
    acc.absorb(np.zeros(4))
    with pytest.raises(ValidationError):
        acc.absorb(np.zeros(5))


# ---------------------------------------------------------------------------
# Best selection


def test_selector_keeps_maximum():
    state = small_state()
    sel = BestSelector()
    for epoch, icc in enumerate([0.5, 0.7, 0.6]):
        sel.update(epoch, icc, state)
    assert sel.epoch_of_best == 1
    assert sel.best_mean_icc == 0.7


def test_selector_ties_keep_earlier_epoch():
    state = small_state()
    sel = BestSelector()
    for epoch in range(4):
        sel.update(epoch, 0.5, state)
    assert sel.epoch_of_best == 0


def test_selector_monotone_sequence_keeps_last():
    state = small_state()
    sel = BestSelector()
    for epoch, icc in enumerate([0.1, 0.2, 0.3, 0.4]):
        sel.update(epoch, icc, state)
    assert sel.epoch_of_best == 3


def test_selector_restores_best_parameters():
    state = small_state(seed=4)
    sel = BestSelector()
    sel.update(0, 0.9, state)
    best = state.flatten()
    state.set_flat(np.zeros_like(best))
    sel.restore(state)
    np.testing.assert_array_equal(state.flatten(), best)


def test_selector_rejects_non_finite_icc():
    sel = BestSelector()
    with pytest.raises(ValidationError):
        sel.update(0, np.nan, small_state())


def test_sgd_moves_against_gradient():
    state = small_state(seed=5)
    opt = SGD(state)
    before = state.flatten()
    grads = {n: np.ones(t.shape, dtype=np.float32) for n, t in state.params.items()}
    opt.step(grads, lr=0.01)
    np.testing.assert_allclose(state.flatten(), before - 0.01, atol=1e-6)
