"""Preset configurations and batch experiments.

Seeding: every random stream is ``SeedSequence(master, spawn_key=key)`` for
an integer ``key`` tuple naming its role, so results do not depend on the
order in which runs execute or on how many workers run them.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .analysis import (
    BoundFit,
    crude_model_norms,
    fit_convolution_bound,
    homogeneous_decay_batch,
    l2_tracking_check,
    profiles_from_norms,
    run_decay_profile,
    worst_direction_search,
    decay_ratio_score,
    crude_norm_score,
    batch_closed_loop,
    crude_model_norms_batch,
)
from .controller import Signal, SimulationTrace, check_error_identities, closed_loop_run
from .estimator import EstimatorConfig, verify_prop1
from .io import ExperimentConfig
from .model import (
    CoefficientBox,
    InitialCondition,
    ParameterBox,
    PlantParameters,
    TimeVaryingPlant,
    check_assumption1,
    consistent_initial_condition,
    predictor_box,
    to_predictor,
)

__all__ = [
    "rng_for",
    "DRIFTING_PLANT_WINDOWS",
    "drifting_plant_coefficient_box",
    "drifting_plant_config",
    "drifting_plant_summary",
    "estimate_lambda_under",
    "sample_admissible_plants",
    "random_minimum_phase_plant",
    "box_around",
    "DecayExperiment",
    "decay_experiment",
    "PlantSweepResult",
    "SweepReport",
    "sweep",
    "l2_experiment",
]

# roles in the seed key
_PLANTS, _FIT, _SEARCH, _HOLDOUT, _RUN, _LAMBDA = range(6)


def rng_for(master: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(master), spawn_key=tuple(key)))


# --- the time-varying example ----------------------------------------------

DRIFTING_PLANT_WINDOWS = {"quiet": (100, 200, True), "disturbed": (200, 500, False),
                     "recovered": (600, 900, True)}


def drifting_plant_coefficient_box() -> CoefficientBox:
    return CoefficientBox(1, [-2.0, -2.0], [2.0, 2.0], [1.5, -1.0], [5.0, 1.0])


def drifting_plant_config(T: int = 1000) -> ExperimentConfig:
    """Second-order plant with slowly varying coefficients.

    In one-step-ahead form ``y(t+1)`` uses coefficients and disturbance
    at ``t``; here ``y(t)`` uses those at ``t``, so both schedules are
    shifted by one step.  The run starts at ``t0 = 1`` from
    ``y(0) = y(-1) = -1``, ``u(-1) = 0``, with ``u(0)`` produced by the
    control law from the midpoint estimate.
    """
    cb = drifting_plant_coefficient_box()
    return ExperimentConfig(
        plant={
            "kind": "sinusoidal",
            "d": 1,
            "a": [{"cos": [[2.0, 0.01]]}, {"sin": [[-2.0, 0.007]]}],
            "b": [{"offset": 3.25, "cos": [[-1.75, 0.008]]}, {"cos": [[-1.0, 0.02]]}],
            "shift": 1,
        },
        box=predictor_box(cb),
        coefficient_box=cb,
        reference=Signal("cosine", amplitude=1.0, frequency=1.0),
        disturbance=Signal("windowed-cosine", shift=1, amplitude=0.1, frequency=10.0,
                           t_start=200, t_end=500),
        delta=math.inf,
        theta0="midpoint",
        x0={"y": [-1.0, -1.0], "u": [None, 0.0]},
        t0=1,
        T=T,
        seed=0,
    )


def _rms(trace: SimulationTrace, lo: int, hi: int, closed: bool) -> float:
    t = trace.times
    sel = (t >= lo if closed else t > lo) & (t <= hi)
    if not np.any(sel):
        return math.nan
    return float(np.sqrt(np.mean(trace.eps[sel] ** 2)))


def drifting_plant_summary(trace: SimulationTrace) -> dict:
    """Windowed RMS tracking error and the box-membership check."""
    out = {name: _rms(trace, lo, hi, closed) for name, (lo, hi, closed) in DRIFTING_PLANT_WINDOWS.items()}
    box = trace.estimator.box
    out["estimates_in_box"] = bool(all(box.contains(th) for th in trace.theta_hat))
    out["degrades_when_disturbed"] = bool(out["quiet"] < out["disturbed"])
    out["recovers_afterwards"] = bool(out["recovered"] < out["disturbed"])
    return out


# --- plant sampling ----------------------------------------------------------

def estimate_lambda_under(cbox: CoefficientBox, rng: np.random.Generator,
                          n_samples: int = 2000):
    """Largest zero magnitude over the box corners plus a uniform sample."""
    plants = list(cbox.corners()) + cbox.sample(rng, n_samples)
    return check_assumption1(plants)


def sample_admissible_plants(cbox: CoefficientBox, rng: np.random.Generator, count: int,
                             max_draws: int | None = None):
    """Draw plants from the box, excluding those that fail the zero condition.

    Returns ``(plants, excluded)`` where ``excluded`` lists the rejected draws.
    """
    plants, excluded = [], []
    limit = max_draws if max_draws is not None else 100 * count
    draws = 0
    while len(plants) < count:
        if draws >= limit:
            raise RuntimeError(f"only {len(plants)} admissible plants in {draws} draws")
        p = cbox.sample(rng, 1)[0]
        draws += 1
        if check_assumption1([p]).ok:
            plants.append(p)
        else:
            excluded.append(p)
    return plants, excluded


def random_minimum_phase_plant(rng: np.random.Generator, n: int, m: int, d: int,
                               max_zero: float = 0.9) -> PlantParameters:
    """Random plant whose ``B`` has all zeros inside ``|z| <= max_zero``.

    Zeros are real or come in conjugate pairs; ``A`` is unconstrained apart
    from coefficients in ``[-1.5, 1.5]``.
    """
    zeros = []
    while len(zeros) < m:
        r = max_zero * math.sqrt(rng.uniform())
        if m - len(zeros) >= 2 and rng.uniform() < 0.5:
            ang = rng.uniform(0, math.pi)
            zeros += [r * np.exp(1j * ang), r * np.exp(-1j * ang)]
        else:
            zeros.append(r * rng.choice([-1.0, 1.0]))
    b0 = rng.uniform(0.5, 3.0) * rng.choice([-1.0, 1.0])
    b = b0 * np.real(np.poly(zeros)) if m else np.array([b0])
    a = rng.uniform(-1.5, 1.5, size=n)
    return PlantParameters(d, a, b)


def box_around(p: PlantParameters, margin: float = 0.5) -> ParameterBox:
    """Predictor box of half-width ``margin`` around ``theta*``, with the
    beta_0 interval shrunk if needed so it keeps its sign."""
    th = to_predictor(p).vector
    lo, hi = th - margin, th + margin
    k = p.n
    half = min(margin, 0.5 * abs(th[k]))
    lo[k], hi[k] = th[k] - half, th[k] + half
    return ParameterBox(lo, hi, beta0_index=k)


# --- decay-bound experiment --------------------------------------------------

@dataclass
class DecayExperiment:
    fit: BoundFit
    lambda_under: float
    n_plants: int
    n_fit_runs: int
    n_holdout_runs: int
    holdout_violations: int
    holdout_worst_ratio: float
    seconds: float
    excluded: int = 0
    per_plant_peak: np.ndarray = field(default=None, repr=False)

    @property
    def passed(self) -> bool:
        return self.fit.feasible and self.fit.lam < 1.0 and self.holdout_violations == 0


def decay_experiment(cbox: CoefficientBox, n_plants: int = 50, fit_seeds: int = 20,
                     holdout_seeds: int = 20, T: int = 300, master_seed: int = 0,
                     search: bool = True, n_worst: int = 64, pulses: bool = False,
                     lambda_samples: int = 2000) -> DecayExperiment:
    """Fit the convolution bound on disturbance-free unit-``x0`` runs.

    For each plant ``fit_seeds`` random directions go into the fitting set,
    plus (with ``search``) the ``n_worst`` most adverse directions found by
    :func:`worst_direction_search`.  ``holdout_seeds`` fresh random runs per
    plant are then checked against the fitted bound.  ``pulses`` adds
    zero-``x0`` runs with a unit reference pulse and a unit disturbance pulse.
    Estimates start at the box midpoint.
    """
    t_start = time.perf_counter()
    box = predictor_box(cbox)
    est = EstimatorConfig(box, box.midpoint)
    lam_rep = estimate_lambda_under(cbox, rng_for(master_seed, _LAMBDA), lambda_samples)
    lam_u = lam_rep.lambda_under
    plants, excluded = sample_admissible_plants(cbox, rng_for(master_seed, _PLANTS), n_plants)

    fit_norms, hold_norms = [], []
    for i, p in enumerate(plants):
        rf, rh = rng_for(master_seed, _FIT, i), rng_for(master_seed, _HOLDOUT, i)
        X = np.array([consistent_initial_condition(p, rf).vector for _ in range(fit_seeds)])
        H = np.array([consistent_initial_condition(p, rh).vector for _ in range(holdout_seeds)])
        fit_norms.append(homogeneous_decay_batch(p, est, X, T))
        hold_norms.append(homogeneous_decay_batch(p, est, H, T))

    fit_profiles = [pr for block in fit_norms for pr in profiles_from_norms(block)]
    if pulses:
        for p in plants:
            fit_profiles += _pulse_profiles(p, est, T)
    if search:
        pre = fit_convolution_bound(fit_profiles, lam_u)
        lam_s = pre.lam if pre.feasible else lam_u + 1e-3
        for i, p in enumerate(plants):
            dim = est.box.dim + 2 * p.d - 2
            W, _ = worst_direction_search(decay_ratio_score(p, est, T, lam_s), dim,
                                          rng_for(master_seed, _SEARCH, i))
            fit_profiles += profiles_from_norms(homogeneous_decay_batch(p, est, W[:n_worst], T))
    fit = fit_convolution_bound(fit_profiles, lam_u)
    holdout = [pr for block in hold_norms for pr in profiles_from_norms(block)]
    if fit.feasible:
        viol, worst = fit.check(holdout)
    else:
        viol, worst = len(holdout) * (T + 1), math.inf
    fit.n_validate, fit.violations, fit.validate_worst_ratio = len(holdout), viol, worst
    peaks = np.array([b.max() for b in fit_norms])
    return DecayExperiment(fit, lam_u, len(plants), len(fit_profiles), len(holdout), viol, worst,
                           time.perf_counter() - t_start, len(excluded), peaks)


def _pulse_profiles(p: PlantParameters, est: EstimatorConfig, T: int):
    plant = TimeVaryingPlant.constant(p)
    x0 = InitialCondition.zeros(p.n, p.m, p.d)
    runs = [
        closed_loop_run(plant, est, Signal("pulse", amplitude=1.0, at=p.d), Signal(), x0, 0, T),
        closed_loop_run(plant, est, Signal(), Signal("pulse", amplitude=1.0, at=0), x0, 0, T),
    ]
    return [run_decay_profile(tr) for tr in runs]


# --- sweep -------------------------------------------------------------------

@dataclass
class PlantSweepResult:
    index: int
    plant: PlantParameters
    admissible: bool
    max_zero: float
    crude_norms: tuple = (math.nan, math.nan, math.nan)
    prop1_passed: bool = True
    prop1_worst_slack: float = math.nan
    identity_residual: float = math.nan
    max_abs_eps_tail: float = math.nan


@dataclass
class SweepReport:
    results: list
    lambda_under: float
    excluded: list

    @property
    def admitted(self):
        return [r for r in self.results if r.admissible]

    @property
    def max_crude_norms(self) -> tuple:
        arr = np.array([r.crude_norms for r in self.admitted])
        return tuple(float(x) for x in arr.max(axis=0)) if arr.size else (math.nan,) * 3

    @property
    def prop1_failures(self) -> int:
        return sum(not r.prop1_passed for r in self.admitted)

    @property
    def passed(self) -> bool:
        return (self.prop1_failures == 0
                and all(math.isfinite(x) for x in self.max_crude_norms)
                and all(r.identity_residual <= 1e-8 for r in self.admitted))


def _sweep_one(args):
    i, p, cfg_dict, seeds, master = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    z = check_assumption1([p])
    if not z.ok:
        return PlantSweepResult(i, p, False, z.lambda_under)
    plant = TimeVaryingPlant.constant(p)
    est = cfg.estimator()
    norms = np.zeros(3)
    ok, worst, resid, tail = True, math.inf, 0.0, 0.0
    for s in range(seeds):
        x0 = consistent_initial_condition(p, rng_for(master, _RUN, i, s), cfg.x0.get("norm", 1.0))
        tr = closed_loop_run(plant, est, cfg.reference, cfg.disturbance, x0, cfg.t0, cfg.T)
        norms = np.maximum(norms, crude_model_norms(tr))
        rep = verify_prop1(tr)
        ok &= rep.passed
        worst = min(worst, rep.step_worst_slack, rep.v_worst_slack)
        ir = check_error_identities(tr)
        scale = 1.0 + float(np.max(np.abs(tr.y))) + float(np.max(np.abs(tr.u)))
        resid = max(resid, ir.eps_identity_residual / scale, ir.e_identity_residual / scale)
        tail = max(tail, float(np.max(np.abs(tr.eps[-50:]))))
    return PlantSweepResult(i, p, True, z.lambda_under, tuple(norms), bool(ok), worst, resid, tail)


def sweep(cfg: ExperimentConfig, n_plants: int, seeds: int = 1, master_seed: int = 0,
          workers: int = 1, run_seed: int | None = None) -> SweepReport:
    """Closed-loop runs over plants drawn from ``cfg.coefficient_box``.

    Plants come from ``master_seed`` alone; each plant's runs use their own
    streams derived from ``run_seed`` (default ``master_seed``) and the plant
    and run counters, so the report does not depend on ``workers``.
    The estimator box is the config's box.  Draws failing the zero
    condition are reported and excluded.
    """
    if n_plants < 1:
        raise ValueError("n_plants must be at least 1")
    if cfg.coefficient_box is None:
        raise ValueError("sweep needs a coefficient box in the config")
    cb = cfg.coefficient_box
    draws = cb.sample(rng_for(master_seed, _PLANTS), n_plants)
    rs = master_seed if run_seed is None else run_seed
    tasks = [(i, p, cfg.to_dict(), seeds, rs) for i, p in enumerate(draws)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_sweep_one, tasks))
    else:
        results = [_sweep_one(t) for t in tasks]
    lam = estimate_lambda_under(cb, rng_for(master_seed, _LAMBDA)).lambda_under
    excluded = [r for r in results if not r.admissible]
    return SweepReport(results, lam, excluded)


# --- square-summable tracking ------------------------------------------------

def l2_experiment(seeds: int = 20, T: int = 2000, master_seed: int = 0,
                  tail_window: int = 100, threshold: float = 1e-6):
    """Disturbance-free tracking of ``cos(t)`` on the fixed midpoint plant of
    the example box; returns one report per seed."""
    cb = drifting_plant_coefficient_box()
    box = predictor_box(cb)
    mid = 0.5 * (cb.a_lower + cb.a_upper), 0.5 * (cb.b_lower + cb.b_upper)
    p = PlantParameters(1, mid[0], mid[1])
    plant = TimeVaryingPlant.constant(p, cb)
    ref = Signal("cosine", amplitude=1.0, frequency=1.0)
    reports = []
    for s in range(seeds):
        x0 = consistent_initial_condition(p, rng_for(master_seed, _RUN, 0, s), 1.0)
        # start away from the true parameters so there is something to learn
        th0 = box.sample(rng_for(master_seed, _FIT, 0, s))
        tr = closed_loop_run(plant, EstimatorConfig(box, th0), ref, Signal(), x0, 0, T)
        reports.append(l2_tracking_check(tr, tail_window, threshold))
    return reports
