import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from projadapt.controller import Signal, closed_loop_run
from projadapt.estimator import (
    EstimatorConfig,
    deadzone_gate,
    estimator_update,
    lyapunov,
    prediction_error,
    verify_prop1,
)
from projadapt.experiments import drifting_plant_config
from projadapt.io import run_config
from projadapt.model import InitialCondition, ParameterBox, TimeVaryingPlant, box_norm

from conftest import random_run, random_setup


def _scalar_cfg(lo, hi, delta=math.inf):
    return EstimatorConfig(ParameterBox(np.array([lo]), np.array([hi]), 0), np.array([lo]),
                           delta=delta)


def test_prediction_error_examples():
    assert prediction_error(np.ones(2), np.array([1.0, 2.0]), 3.0) == 0.0
    assert prediction_error(np.zeros(2), np.array([0.3, 0.1]), 4.0) == 4.0
    assert prediction_error(np.array([1.0, 2.0]), np.zeros(2), 5.0) == 5.0


def test_gate_zero_regressor_is_off():
    for delta in (1.0, math.inf):
        cfg = _scalar_cfg(1.0, 2.0, delta)
        assert deadzone_gate(np.zeros(1), 1.0, cfg) == 0


def test_gate_without_dead_zone_is_on():
    cfg = _scalar_cfg(1.0, 2.0)
    assert deadzone_gate(np.array([1e-3]), 1e6, cfg) == 1


def test_gate_threshold():
    box = ParameterBox(np.array([0.5]), np.array([1.0]), 0)
    assert box_norm(box) == 1.0
    cfg = EstimatorConfig(box, np.array([1.0]), delta=1.0)
    assert deadzone_gate(np.array([1.0]), 2.9, cfg) == 1
    assert deadzone_gate(np.array([1.0]), 3.1, cfg) == 0


def _alpha_cfg(half):
    # [-half, half] on alpha_0; beta_0 sits off the regressor
    box = ParameterBox(np.array([-half, 1.0]), np.array([half, 2.0]), beta0_index=1)
    return EstimatorConfig(box, np.array([0.0, 1.0]))


def test_update_scalar_example():
    st_ = estimator_update(np.array([0.0, 1.0]), np.array([1.0, 0.0]), 2.0, _alpha_cfg(3.0))
    assert st_.theta_check[0] == pytest.approx(2.0)
    assert st_.theta_hat[0] == pytest.approx(2.0)
    assert st_.nu == pytest.approx(2.0)
    assert st_.rho == 1


def test_update_clamped_step_is_shorter_than_nu():
    st_ = estimator_update(np.array([0.0, 1.0]), np.array([1.0, 0.0]), 2.0, _alpha_cfg(1.0))
    assert st_.theta_check[0] == pytest.approx(2.0)
    assert st_.theta_hat[0] == 1.0
    assert np.linalg.norm(st_.theta_hat - [0.0, 1.0]) == 1.0 <= st_.nu == 2.0


def test_update_with_zero_error_keeps_estimate():
    cfg = _scalar_cfg(1.0, 3.0)
    st_ = estimator_update(np.array([2.0]), np.array([0.7]), 1.4, cfg)
    assert st_.theta_hat[0] == 2.0 and st_.nu == 0.0


def test_min_phi_norm_floor():
    box = ParameterBox(np.array([0.5]), np.array([3.0]), 0)
    cfg = EstimatorConfig(box, np.array([1.0]), min_phi_norm=0.1)
    st_ = estimator_update(np.array([1.0]), np.array([0.01]), 5.0, cfg)
    assert st_.rho == 0 and st_.theta_hat[0] == 1.0


def test_config_validation():
    box = ParameterBox(np.array([0.5]), np.array([3.0]), 0)
    with pytest.raises(ValueError):
        EstimatorConfig(box, np.array([1.0]), delta=0.0)
    with pytest.raises(ValueError):
        EstimatorConfig(box, np.array([1.0]), min_phi_norm=-1.0)
    assert EstimatorConfig(box, np.array([9.0])).theta0[0] == 3.0


def test_lyapunov_examples():
    assert lyapunov([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert lyapunov([3.0, 4.0], [0.0, 0.0]) == 25.0


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([0.5, 1.0, math.inf]))
def test_update_step_bound_and_box(seed, delta):
    rng = np.random.default_rng(seed)
    dim = int(rng.integers(1, 6))
    lo = rng.uniform(-2, 0, dim)
    hi = lo + rng.uniform(0.1, 3, dim)
    lo[0], hi[0] = 0.5, 0.5 + hi[0] - lo[0]
    box = ParameterBox(lo, hi, 0)
    cfg = EstimatorConfig(box, box.sample(rng), delta=delta)
    th = box.sample(rng)
    phi = rng.standard_normal(dim) * rng.uniform(0.0, 5.0)
    y = float(rng.standard_normal() * 5)
    s = estimator_update(th, phi, y, cfg)
    assert box.contains(s.theta_hat)
    assert np.linalg.norm(s.theta_hat - th) <= s.nu + 1e-10
    if s.rho == 0:
        assert np.array_equal(s.theta_hat, th)
    # the projected update never moves away from any point of the box
    ts = box.sample(rng)
    if s.rho:
        e = s.e
        wb = y - phi @ ts
        rhs = lyapunov(th, ts) + (-0.5 * e * e + 2 * wb * wb) / (phi @ phi)
        assert lyapunov(s.theta_hat, ts) <= rhs + 1e-9


def test_update_bounds_holds_on_random_runs():
    rng = np.random.default_rng(7)
    for k in range(20):
        tr = random_run(rng, T=150, delta=1.0 if k % 2 else math.inf, disturbed=k % 3 == 0)
        rep = verify_prop1(tr)
        assert rep.passed, rep.violations[:3]
        assert rep.step_worst_slack >= -1e-10


def test_update_bounds_energy_bound_without_disturbance():
    rng = np.random.default_rng(8)
    tr = random_run(rng, T=300)
    rep = verify_prop1(tr)
    assert rep.nu_sq_sum <= 8 * tr.box_norm ** 2 + 1e-6
    assert rep.nu_sq_sum == pytest.approx(float(np.sum(tr.nu ** 2)))


def test_update_bounds_frozen_estimate_is_tight():
    rng = np.random.default_rng(9)
    p, est, ref, w, x0 = random_setup(rng)
    tr = closed_loop_run(TimeVaryingPlant.constant(p), est, ref, w, x0, 0, 50,
                         freeze_estimate=True)
    rep = verify_prop1(tr)
    assert np.all(tr.rho == 0)
    assert np.allclose(tr.V, tr.V[0])
    assert rep.v_worst_slack == pytest.approx(0.0, abs=1e-12)


def test_update_bounds_flags_a_corrupted_step():
    rng = np.random.default_rng(10)
    tr = random_run(rng, T=60)
    th = tr.theta_hat.copy()
    th[20] = tr.estimator.box.upper
    bad = dataclasses.replace(tr, theta_hat=th)
    rep = verify_prop1(bad)
    assert not rep.passed
    assert any(v[1] == "step bound" for v in rep.violations)


def test_update_bounds_time_varying_example():
    tr = run_config(drifting_plant_config())
    rep = verify_prop1(tr, tol=1e-9)
    assert rep.passed
    assert rep.v_worst_slack >= -1e-9


def test_update_bounds_schedule_shape_checked():
    tr = run_config(drifting_plant_config(T=50))
    with pytest.raises(ValueError):
        verify_prop1(tr, tr.theta_star[:-1])


def test_zero_history_run_is_identically_zero():
    rng = np.random.default_rng(11)
    p, est, _, _, _ = random_setup(rng)
    x0 = InitialCondition.zeros(p.n, p.m, p.d)
    tr = closed_loop_run(TimeVaryingPlant.constant(p), est, Signal(), Signal(), x0, 0, 40)
    assert np.all(tr.y == 0) and np.all(tr.u == 0) and np.all(tr.nu == 0)
