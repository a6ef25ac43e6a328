import math

import numpy as np
import pytest

from projadapt.checks import overall_status, verify_trace
from projadapt.experiments import (
    DRIFTING_PLANT_WINDOWS,
    box_around,
    decay_experiment,
    estimate_lambda_under,
    l2_experiment,
    random_minimum_phase_plant,
    rng_for,
    sample_admissible_plants,
    drifting_plant_coefficient_box,
    drifting_plant_config,
    drifting_plant_summary,
    sweep,
)
from projadapt.io import load_config, run_config
from projadapt.model import CoefficientBox, check_assumption1, to_predictor
from projadapt.poly import zeros_in_z

from conftest import random_run


def test_rng_streams():
    a = rng_for(3, 1, 2).standard_normal(4)
    assert np.array_equal(a, rng_for(3, 1, 2).standard_normal(4))
    assert not np.array_equal(a, rng_for(3, 2, 1).standard_normal(4))
    assert not np.array_equal(a, rng_for(4, 1, 2).standard_normal(4))


def test_example_configuration():
    cfg = drifting_plant_config()
    assert (cfg.t0, cfg.T) == (1, 1000)
    assert math.isinf(cfg.delta)
    assert np.allclose(cfg.estimator().theta0, [0.0, 0.0, 3.25, 0.0])
    plant = cfg.build_plant()
    # y(1) uses the coefficients the one-step-ahead form evaluates at 0
    p1 = plant.at(1)
    assert p1.a == pytest.approx((2.0, 0.0)) and p1.b == pytest.approx((1.5, -1.0))
    # disturbance active for 200 < t <= 500 in one-step-ahead indexing
    w = cfg.disturbance
    assert w(201) == 0.0 and w(202) != 0.0 and w(501) != 0.0 and w(502) == 0.0
    assert all(drifting_plant_coefficient_box().contains(plant.at(t)) for t in range(0, 1001, 7))


def test_example_summary_windows():
    tr = run_config(drifting_plant_config())
    s = drifting_plant_summary(tr)
    lo, hi, _ = DRIFTING_PLANT_WINDOWS["disturbed"]
    sel = (tr.times > lo) & (tr.times <= hi)
    assert s["disturbed"] == pytest.approx(np.sqrt(np.mean(tr.eps[sel] ** 2)))
    assert s["estimates_in_box"]
    assert s["degrades_when_disturbed"] and s["recovers_afterwards"]


def test_verify_example_trace():
    checks = verify_trace(run_config(drifting_plant_config()))
    by_name = {c.name: c for c in checks}
    assert overall_status(checks)
    assert by_name["estimates in box"].status == "PASS"
    assert by_name["crude model"].status == "PASS"
    assert by_name["perturbed model"].status == "SKIP"


def test_verify_random_traces():
    rng = np.random.default_rng(0)
    for k in range(6):
        checks = verify_trace(random_run(rng, T=80, delta=1.0 if k % 2 else math.inf,
                                         disturbed=True))
        assert overall_status(checks), [c.line() for c in checks if c.status == "FAIL"]
        assert all(c.line().startswith(c.status) for c in checks)


def test_delay_two_config_passes():
    checks = verify_trace(run_config(load_config("configs/delay2_disturbed.json")))
    assert all(c.status == "PASS" for c in checks), [c.line() for c in checks]


def test_lambda_under_of_example_box():
    rep = estimate_lambda_under(drifting_plant_coefficient_box(), rng_for(0, 5), 200)
    assert rep.ok and rep.lambda_under == pytest.approx(1 / 1.5)


def test_admissible_sampling_excludes_bad_draws():
    cb = CoefficientBox(1, [0.0], [0.5], [1.0, -2.0], [1.5, 2.0])
    plants, excluded = sample_admissible_plants(cb, rng_for(1, 0), 20)
    assert len(plants) == 20 and excluded
    assert check_assumption1(plants).ok
    assert all(not check_assumption1([p]).ok for p in excluded)
    with pytest.raises(RuntimeError):
        sample_admissible_plants(CoefficientBox(1, [], [], [1.0, 2.0], [1.0, 3.0]),
                                 rng_for(1, 0), 2)


def test_random_minimum_phase_plant():
    rng = np.random.default_rng(2)
    for _ in range(30):
        p = random_minimum_phase_plant(rng, 2, 3, 2, max_zero=0.7)
        assert p.m == 3 and p.d == 2
        assert np.all(np.abs(zeros_in_z(p.B)) <= 0.7 + 1e-9)


def test_box_around_keeps_sign():
    p = random_minimum_phase_plant(np.random.default_rng(3), 1, 1, 1)
    box = box_around(p, margin=10.0)
    assert box.contains(to_predictor(p).vector)
    assert box.lower[1] * box.upper[1] > 0


def test_sweep_is_independent_of_workers():
    cfg = load_config("configs/box_sweep.json").with_overrides(T=60)
    a = sweep(cfg, 4, seeds=2, master_seed=5, workers=1)
    b = sweep(cfg, 4, seeds=2, master_seed=5, workers=2)
    assert [r.crude_norms for r in a.results] == [r.crude_norms for r in b.results]
    assert a.passed and len(a.admitted) == 4
    c = sweep(cfg, 4, seeds=2, master_seed=5, run_seed=9)
    assert [r.plant for r in c.results] == [r.plant for r in a.results]


def test_sweep_argument_checks():
    cfg = load_config("configs/box_sweep.json")
    with pytest.raises(ValueError):
        sweep(cfg, 0)


def test_l2_small():
    reps = l2_experiment(seeds=3, T=600)
    assert all(r.passed and math.isfinite(r.ratio) for r in reps)
    assert reps[0].start == 1


def test_decay_small_is_deterministic():
    kw = dict(n_plants=3, fit_seeds=4, holdout_seeds=4, T=150, master_seed=1,
              lambda_samples=100)
    a = decay_experiment(drifting_plant_coefficient_box(), **kw)
    b = decay_experiment(drifting_plant_coefficient_box(), **kw)
    assert a.fit.lam == b.fit.lam and a.fit.c == b.fit.c
    assert a.fit.feasible and a.fit.lam < 1
    assert a.n_fit_runs == 3 * 4 + 3 * 64
    assert a.n_holdout_runs == 12
    c = decay_experiment(drifting_plant_coefficient_box(), search=False, pulses=True, **kw)
    assert c.n_fit_runs == 3 * 4 + 3 * 2
