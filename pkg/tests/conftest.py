import math

import numpy as np
import pytest

from projadapt.controller import Signal, closed_loop_run
from projadapt.estimator import EstimatorConfig
from projadapt.experiments import box_around, random_minimum_phase_plant
from projadapt.model import PlantParameters, TimeVaryingPlant, consistent_initial_condition


def stable_monic(rng, n, radius=0.8):
    """Coefficients a_1..a_n of a monic polynomial with roots inside ``radius``."""
    roots = []
    while len(roots) < n:
        r = radius * math.sqrt(rng.uniform())
        if n - len(roots) >= 2 and rng.uniform() < 0.5:
            ang = rng.uniform(0, math.pi)
            roots += [r * np.exp(1j * ang), r * np.exp(-1j * ang)]
        else:
            roots.append(r * rng.choice([-1.0, 1.0]))
    return np.real(np.poly(roots))[1:] if n else np.zeros(0)


def random_setup(rng, delta=math.inf, disturbed=False, n_max=3, m_max=2, d_max=3):
    """Plant, estimator and signals for one randomized closed-loop run."""
    n = int(rng.integers(0, n_max + 1))
    m = int(rng.integers(0, m_max + 1))
    d = int(rng.integers(1, d_max + 1))
    p = random_minimum_phase_plant(rng, n, m, d)
    box = box_around(p, margin=float(rng.uniform(0.2, 0.8)))
    est = EstimatorConfig(box, box.sample(rng), delta=delta)
    ref = Signal("cosine", amplitude=float(rng.uniform(0.5, 2.0)),
                 frequency=float(rng.uniform(0.1, 2.0)))
    w = (Signal("cosine", amplitude=float(rng.uniform(0.01, 0.2)),
                frequency=float(rng.uniform(0.1, 3.0)))
         if disturbed else Signal())
    x0 = consistent_initial_condition(p, rng, float(rng.uniform(0.1, 3.0)))
    return p, est, ref, w, x0


def random_run(rng, T=200, **kw):
    p, est, ref, w, x0 = random_setup(rng, **kw)
    return closed_loop_run(TimeVaryingPlant.constant(p), est, ref, w, x0, 0, T)


@pytest.fixture
def midpoint_plant():
    return PlantParameters(1, [0.0, 0.0], [3.25, 0.0])
