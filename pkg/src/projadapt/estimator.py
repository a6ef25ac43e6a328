"""Ideal projection estimator with the rho_delta dead-zone gate.

    e(t+1)      = y(t+1) - phi(t-d+1) @ theta_hat(t)
    theta_check = theta_hat(t) + rho * phi / ||phi||^2 * e(t+1)
    theta_hat(t+1) = clamp(theta_check) onto the parameter box

with ``rho = 1`` iff ``|e| < (2 ||S|| + delta) ||phi||`` (for ``delta = inf``
iff ``phi != 0``).  No constant is added to ``||phi||^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import ParameterBox, box_norm, project_onto_box

__all__ = [
    "EstimatorConfig",
    "EstimatorStep",
    "prediction_error",
    "deadzone_gate",
    "estimator_update",
    "lyapunov",
    "Prop1Report",
    "verify_prop1",
]


@dataclass(frozen=True, eq=False)
class EstimatorConfig:
    box: ParameterBox
    theta0: np.ndarray
    delta: float = math.inf
    min_phi_norm: float = 0.0
    box_norm: float = field(init=False)

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be in (0, inf], got {self.delta!r}")
        if self.min_phi_norm < 0:
            raise ValueError("min_phi_norm must be nonnegative")
        theta0 = project_onto_box(np.asarray(self.theta0, dtype=float), self.box)
        object.__setattr__(self, "theta0", theta0)
        object.__setattr__(self, "box_norm", box_norm(self.box))

    def __eq__(self, other):
        if not isinstance(other, EstimatorConfig):
            return NotImplemented
        return (self.box == other.box and np.array_equal(self.theta0, other.theta0)
                and self.delta == other.delta and self.min_phi_norm == other.min_phi_norm)


@dataclass(frozen=True)
class EstimatorStep:
    e: float
    rho: int
    nu: float
    theta_check: np.ndarray
    theta_hat: np.ndarray


def prediction_error(phi, theta_hat, y_next: float) -> float:
    return float(y_next - np.dot(phi, theta_hat))


def deadzone_gate(phi, e: float, cfg: EstimatorConfig, phi_norm: float | None = None) -> int:
    """1 to run the update, 0 to skip it."""
    if phi_norm is None:
        phi_norm = float(np.linalg.norm(phi))
    if math.isinf(cfg.delta):
        # inf * 0 = 0 convention: only phi = 0 switches the update off
        return int(phi_norm > 0.0)
    return int(abs(e) < (2.0 * cfg.box_norm + cfg.delta) * phi_norm)


def estimator_update(theta_hat, phi, y_next: float, cfg: EstimatorConfig) -> EstimatorStep:
    """One estimator step from ``theta_hat(t)``, ``phi(t-d+1)`` and ``y(t+1)``."""
    theta_hat = np.asarray(theta_hat, dtype=float)
    phi = np.asarray(phi, dtype=float)
    e = float(y_next - phi @ theta_hat)
    phi_sq = float(phi @ phi)
    phi_norm = math.sqrt(phi_sq)
    rho = deadzone_gate(phi, e, cfg, phi_norm)
    if rho and phi_norm > cfg.min_phi_norm:
        theta_check = theta_hat + phi * (e / phi_sq)
        nu = abs(e) / phi_norm
    else:
        rho = 0
        theta_check = theta_hat.copy()
        nu = 0.0
    new = np.minimum(np.maximum(theta_check, cfg.box.lower), cfg.box.upper)
    return EstimatorStep(e, rho, nu, theta_check, new)


def lyapunov(theta_hat, theta_star) -> float:
    diff = np.asarray(theta_hat, dtype=float) - np.asarray(theta_star, dtype=float)
    return float(diff @ diff)


@dataclass
class Prop1Report:
    passed: bool
    step_worst_slack: float
    v_worst_slack: float
    n_steps: int
    nu_sq_sum: float
    violations: list = field(default_factory=list)
    notices: list = field(default_factory=list)


def verify_prop1(trace, theta_star=None, tol: float = 1e-9) -> Prop1Report:
    """Check the step-size bound and the telescoped Lyapunov inequality.

    For every update ``j`` (from ``t0-1`` to ``T-1``):

    (i)  ||theta_hat(j+1) - theta_hat(j)|| <= rho |e(j+1)| / ||phi(j-d+1)||
    (ii) V(j+1) <= V(t0-1) + sum_k rho_k [-e^2/2 + 2 wbar^2] / ||phi||^2

    Slack is ``rhs - lhs``; a step fails when slack < -tol.  Only valid for
    a plant whose ``theta*`` lies in the box.  A 2-D ``theta_star`` laid out
    like ``trace.theta_star`` (row ``r`` generates ``y(t0 + r + 1)``; the
    default for a time-varying trace) switches (ii) to its one-step form,
    since the telescoped sum needs a constant ``theta*``.  Steps whose
    regressor norm is within 10 machine epsilons of zero are reported as
    notices instead of being asserted.
    """
    if theta_star is None:
        theta_star = (trace.theta_star_at(trace.t0) if trace.time_invariant
                      else trace.theta_star)
    theta_star = np.asarray(theta_star, dtype=float)
    d = trace.d
    th = trace.theta_hat  # rows t0-1 .. T
    schedule = theta_star.ndim == 2
    if schedule and theta_star.shape[0] != th.shape[0] - 1:
        raise ValueError("theta* schedule needs one row per update")
    V0 = lyapunov(th[0], theta_star[0] if schedule else theta_star)
    acc = V0
    step_worst = math.inf
    v_worst = math.inf
    violations, notices = [], []
    eps_floor = 10.0 * np.finfo(float).eps
    nu_sq = 0.0
    for k in range(1, th.shape[0]):
        t_new = trace.t0 - 1 + k  # theta_hat(t_new) produced by e(t_new)
        phi = trace.phi(t_new - d)
        phi_norm = float(np.linalg.norm(phi))
        e = trace.e_at(t_new)
        rho = trace.rho_at(t_new)
        if schedule:
            # one step at a time against the parameter that produced y(t_new)
            ts_k = theta_star[max(k - 2, 0)]
            acc = lyapunov(th[k - 1], ts_k)
        else:
            ts_k = theta_star
        step = float(np.linalg.norm(th[k] - th[k - 1]))
        if phi_norm > 0:
            bound = rho * abs(e) / phi_norm
            wb = trace.wbar_at(t_new - d)
            acc += rho * (-0.5 * e * e + 2.0 * wb * wb) / (phi_norm * phi_norm)
            nu_sq += (rho * abs(e) / phi_norm) ** 2
        else:
            bound = 0.0
        slack1 = bound - step
        V = lyapunov(th[k], ts_k)
        slack2 = acc - V
        if 0 < phi_norm <= eps_floor:
            notices.append((t_new, "regressor norm near zero", phi_norm))
            continue
        step_worst = min(step_worst, slack1)
        v_worst = min(v_worst, slack2)
        if slack1 < -tol:
            violations.append((t_new, "step bound", step, bound))
        if slack2 < -tol:
            violations.append((t_new, "lyapunov bound", V, acc))
    return Prop1Report(not violations, step_worst, v_worst, th.shape[0] - 1, nu_sq,
                       violations, notices)
