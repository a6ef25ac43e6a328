"""Invariant suite run against a finished trace."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .analysis import (
    build_extended_system,
    build_good_model,
    crude_model_residual,
    decompose_prop3,
    extended_residual,
    good_model_residual,
)
from .controller import SimulationTrace, check_error_identities
from .estimator import verify_prop1

__all__ = ["Check", "verify_trace", "overall_status"]

PASS, FAIL, SKIP = "PASS", "FAIL", "SKIP"


@dataclass
class Check:
    name: str
    status: str
    worst: float = math.nan
    detail: str = ""

    def line(self) -> str:
        w = "" if math.isnan(self.worst) else f" worst={self.worst:.3e}"
        d = f" ({self.detail})" if self.detail else ""
        return f"{self.status} {self.name}{w}{d}"


def overall_status(checks) -> bool:
    return all(c.status != FAIL for c in checks)


def _scale(tr: SimulationTrace, t: int) -> float:
    lo, hi = t, min(t + tr.d + 1, tr.T)
    mag = max(
        max(abs(tr.y_at(s)) for s in range(lo, hi + 1)),
        max(abs(tr.ystar_at(s)) for s in range(lo, hi + 1)),
        max(abs(tr.w_at(s)) for s in range(lo, hi + 1)),
    )
    return 1.0 + float(np.linalg.norm(tr.phi(t))) + float(np.linalg.norm(tr.phi(t + 1))) + mag


def _residual_check(name, pairs, tol):
    if not pairs:
        return Check(name, SKIP, detail="no checkable steps")
    ratio = max(r / s for r, s in pairs)
    return Check(name, PASS if ratio <= tol else FAIL, ratio, f"{len(pairs)} steps, residual/scale")


def verify_trace(trace: SimulationTrace, tol: float = 1e-8, slack_tol: float = 1e-9,
                 structural_tol: float = 1e-12) -> list[Check]:
    """All applicable invariant checks, one :class:`Check` each.

    Checks needing a fixed plant are skipped for time-varying schedules; the
    estimator checks also need ``theta*`` inside the box.  Residual checks
    report ``residual / (1 + state magnitude)`` against ``tol``.
    """
    out: list[Check] = []
    tr = trace
    box = tr.estimator.box if tr.estimator is not None else None
    if box is not None:
        worst = max(float(np.max(box.lower - th)) for th in tr.theta_hat)
        worst = max(worst, max(float(np.max(th - box.upper)) for th in tr.theta_hat))
        out.append(Check("estimates in box", PASS if worst <= 0.0 else FAIL, worst))

    fixed = tr.time_invariant and tr.plant is not None
    ts_in_box = fixed and box is not None and box.contains(tr.theta_star_at(tr.t0), 1e-12)

    if ts_in_box:
        rep = verify_prop1(tr, tol=slack_tol)
        out.append(Check("step-size bound", PASS if rep.step_worst_slack >= -slack_tol else FAIL,
                         rep.step_worst_slack))
        out.append(Check("lyapunov inequality", PASS if rep.v_worst_slack >= -slack_tol else FAIL,
                         rep.v_worst_slack))
        ts = tr.history.t_start
        if np.all(tr.w[tr.t0 - tr.d + 1 - ts:] == 0.0):
            cap = 8.0 * tr.box_norm ** 2
            slack = cap + 1e-6 - rep.nu_sq_sum
            out.append(Check("update energy", PASS if slack >= 0 else FAIL, slack,
                             f"sum nu^2 = {rep.nu_sq_sum:.4g}, cap {cap:.4g}"))
        if rep.notices:
            out[-1].detail += f"; {len(rep.notices)} near-zero regressor notices"
    else:
        why = "time-varying plant" if not fixed else "theta* outside the box"
        out.append(Check("estimator properties", SKIP, detail=why))

    if fixed:
        ir = check_error_identities(tr)
        mag = 1.0 + float(np.max(np.abs(tr.y))) + float(np.max(np.abs(tr.u)))
        out.append(Check("prediction-error identity", PASS if ir.e_identity_residual <= tol * mag
                         else FAIL, ir.e_identity_residual / mag))
        out.append(Check("tracking-error identity", PASS if ir.eps_identity_residual <= tol * mag
                         else FAIL, ir.eps_identity_residual / mag))
        gm = build_good_model(tr.plant.at(tr.t0))
        pairs = [(good_model_residual(tr, t, gm), _scale(tr, t))
                 for t in range(tr.t0 - 1, tr.T - tr.d)]
        out.append(_residual_check("good model", pairs, tol))
    else:
        out.append(Check("error identities", SKIP, detail="time-varying plant"))

    pairs = [(crude_model_residual(tr, t), _scale(tr, t)) for t in range(tr.t0 - 1, tr.T)]
    out.append(_residual_check("crude model", pairs, tol))

    lo, hi = tr.t0 + tr.d - 1, tr.T - tr.d - 1
    if not fixed:
        out.append(Check("perturbed model", SKIP, detail="time-varying plant"))
    elif hi < lo:
        out.append(Check("perturbed model", SKIP,
                         detail=f"trace too short for {tr.d + 1} steps of lookahead"))
    else:
        gm = build_good_model(tr.plant.at(tr.t0))
        ext = build_extended_system(gm)
        rec, extp = [], []
        nb = e0 = db = math.inf
        dn_err = 0.0
        for t in range(lo, hi + 1):
            dec = decompose_prop3(tr, t, gm)
            rec.append((dec.residual, dec.scale))
            extp.append(extended_residual(tr, t, ext, dec))
            dn_err = max(dn_err, dec.dbar_norm_error)
            nb = min(nb, dec.nubar_slack)
            e0 = min(e0, dec.eta0_slack)
            db = min(db, dec.delta_bound_slack)
        out.append(_residual_check("perturbed model reconstruction", rec, tol))
        out.append(_residual_check("extended system", extp, tol))
        out.append(Check("rank-one term norms", PASS if dn_err <= structural_tol else FAIL, dn_err))
        out.append(Check("combined update size", PASS if nb >= -structural_tol else FAIL, nb))
        if math.isinf(tr.delta):
            out.append(Check("dead-zone remainder", SKIP, detail="delta = inf"))
        else:
            out.append(Check("dead-zone remainder", PASS if e0 >= -structural_tol else FAIL, e0))
        out.append(Check("perturbation bound", PASS if db >= -structural_tol else FAIL, db))
    return out
