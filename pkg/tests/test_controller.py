import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from projadapt.controller import (
    Signal,
    check_error_identities,
    closed_loop_run,
    control_input,
    rebuild_trace,
    tracking_error,
)
from projadapt.estimator import EstimatorConfig
from projadapt.experiments import box_around
from projadapt.model import (
    InitialCondition,
    PlantParameters,
    TimeVaryingPlant,
    consistent_initial_condition,
    to_predictor,
)

from conftest import random_run, random_setup


def test_control_law_examples():
    th = np.array([0.0, 2.0, 0.0])
    assert control_input(th, np.zeros(3), 1.0, n=1) == 0.5
    # n = 0, m = 0, d = 1: the law reduces to y*(t+1) / beta_0
    assert control_input(np.array([4.0]), np.array([123.0]), 2.0, n=0) == 0.5


def test_control_law_solves_the_prediction():
    rng = np.random.default_rng(0)
    th = rng.standard_normal(5)
    th[2] = 1.7
    phi = rng.standard_normal(5)
    u = control_input(th, phi, 0.8, n=2)
    phi[2] = u
    assert th @ phi == pytest.approx(0.8)


def test_control_law_rejects_small_beta0():
    with pytest.raises(RuntimeError):
        control_input(np.array([0.1]), np.zeros(1), 1.0, n=0, beta0_floor=0.5)


def test_signals():
    assert Signal()(5) == 0.0
    assert Signal("constant", value=2.0)(-3) == 2.0
    assert Signal("cosine", amplitude=2.0, frequency=0.5)(2) == pytest.approx(2 * math.cos(1.0))
    win = Signal("windowed-cosine", amplitude=1.0, frequency=0.0, t_start=3, t_end=5)
    assert [win(t) for t in range(2, 7)] == [0.0, 0.0, 1.0, 1.0, 0.0]
    assert Signal("pulse", amplitude=3.0, at=4)(4) == 3.0
    assert Signal("cosine", shift=1, amplitude=1.0, frequency=1.0)(1) == 1.0
    smp = Signal("samples", values=[1.0, 2.0], t_first=10)
    assert smp(11) == 2.0
    with pytest.raises(IndexError):
        smp(12)
    with pytest.raises(ValueError):
        Signal("square")


def test_signal_spec_round_trip():
    for s in (Signal(), Signal("cosine", shift=2, amplitude=1.0, frequency=0.3),
              Signal("samples", values=[1, 2, 3], t_first=-1)):
        assert Signal.from_spec(s.spec()) == s


def test_zero_everything_gives_zero_trace():
    p = PlantParameters(2, [0.4, -0.1], [1.0, 0.3])
    est = EstimatorConfig(box_around(p), to_predictor(p).vector + 0.1)
    tr = closed_loop_run(TimeVaryingPlant.constant(p), est, Signal(), Signal(),
                         InitialCondition.zeros(2, 1, 2), 0, 30)
    assert not np.any(tr.y) and not np.any(tr.u) and not np.any(tr.e)


def test_exact_estimate_tracks_perfectly():
    rng = np.random.default_rng(1)
    p = PlantParameters(2, [0.5, 0.2], [1.0, 0.4])
    th = to_predictor(p).vector
    est = EstimatorConfig(box_around(p), th)
    x0 = consistent_initial_condition(p, rng)
    tr = closed_loop_run(TimeVaryingPlant.constant(p), est,
                         Signal("cosine", amplitude=1.0, frequency=0.7), Signal(), x0, 0, 60)
    assert np.max(np.abs(tr.eps[p.d:])) < 1e-12
    assert np.allclose(tr.theta_hat, th)


def test_error_identities_on_random_runs():
    rng = np.random.default_rng(2)
    for k in range(15):
        tr = random_run(rng, T=120, delta=1.0 if k % 2 else math.inf, disturbed=True)
        ir = check_error_identities(tr)
        scale = 1.0 + np.max(np.abs(tr.y)) + np.max(np.abs(tr.u))
        assert ir.checked
        assert ir.eps_identity_residual <= 1e-9 * scale
        assert ir.e_identity_residual <= 1e-9 * scale


def test_tracking_error_sign():
    rng = np.random.default_rng(3)
    tr = random_run(rng, T=30)
    assert np.array_equal(tracking_error(tr), tr.ystar - tr.y)


def test_trace_layout():
    rng = np.random.default_rng(4)
    tr = random_run(rng, T=40)
    rows = tr.T - tr.t0 + 1
    assert tr.y.shape == tr.u.shape == tr.e.shape == tr.nu.shape == (rows,)
    assert tr.theta_hat.shape == (rows + 1, tr.n + tr.m + tr.d)
    assert tr.V.shape == (rows + 1,)
    assert np.allclose(tr.V, np.sum((tr.theta_hat - tr.theta_star_at(tr.t0)) ** 2, axis=1))
    box = tr.estimator.box
    assert all(box.contains(th) for th in tr.theta_hat)


def test_gated_steps_keep_estimate():
    rng = np.random.default_rng(5)
    for _ in range(10):
        tr = random_run(rng, T=150, delta=0.05, disturbed=True)
        off = np.flatnonzero(tr.rho == 0)
        assert np.all(tr.theta_hat[off + 1] == tr.theta_hat[off])


def test_runs_are_deterministic():
    a = random_run(np.random.default_rng(6), T=80, disturbed=True)
    b = random_run(np.random.default_rng(6), T=80, disturbed=True)
    assert np.array_equal(a.y, b.y) and np.array_equal(a.theta_hat, b.theta_hat)


def test_rebuild_reproduces_trace():
    rng = np.random.default_rng(7)
    p, est, ref, w, x0 = random_setup(rng, disturbed=True)
    plant = TimeVaryingPlant.constant(p)
    tr = closed_loop_run(plant, est, ref, w, x0, 2, 50)
    rb = rebuild_trace(plant, est, ref, w, x0, 2, 50, tr.y, tr.u, tr.e, tr.rho, tr.nu,
                       tr.theta_hat[1:])
    for name in ("y", "u", "e", "nu", "theta_hat", "V", "w", "wbar", "theta_star"):
        assert np.array_equal(getattr(rb, name), getattr(tr, name), equal_nan=True), name
    with pytest.raises(ValueError):
        rebuild_trace(plant, est, ref, w, x0, 2, 50, tr.y[1:], tr.u, tr.e, tr.rho, tr.nu,
                      tr.theta_hat[1:])


def test_run_input_validation():
    p = PlantParameters(1, [0.2], [1.0])
    est = EstimatorConfig(box_around(p), to_predictor(p).vector)
    plant = TimeVaryingPlant.constant(p)
    with pytest.raises(ValueError):
        closed_loop_run(plant, est, Signal(), Signal(), InitialCondition.zeros(1, 0, 1), 5, 5)
    with pytest.raises(ValueError):
        closed_loop_run(plant, est, Signal(), Signal(), InitialCondition.zeros(2, 0, 1), 0, 5)
    with pytest.raises(ValueError):
        closed_loop_run(plant, est, Signal(), Signal(),
                        InitialCondition([np.nan], []), 0, 5)
    other = EstimatorConfig(box_around(PlantParameters(1, [0.2], [1.0, 0.1])),
                            np.array([0.0, 1.0, 0.0]))
    with pytest.raises(ValueError):
        closed_loop_run(plant, other, Signal(), Signal(), InitialCondition.zeros(1, 0, 1), 0, 5)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_estimates_stay_in_box(seed):
    tr = random_run(np.random.default_rng(seed), T=80, disturbed=True,
                    delta=1.0 if seed % 2 else math.inf)
    box = tr.estimator.box
    assert np.all(tr.theta_hat >= box.lower) and np.all(tr.theta_hat <= box.upper)
