"""d-step-ahead certainty-equivalence controller and the closed-loop engine.

Within one step ``t`` the engine reads ``y*(t+d)``, computes ``u(t)``,
advances the plant to ``y(t+1)`` and updates the estimate with ``e(t+1)``
formed from ``phi(t-d+1)`` and ``theta_hat(t)``.  The estimator starts one
step early, at ``t0 - 1``, from regressors built out of the initial condition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .estimator import EstimatorConfig, estimator_update
from .model import (
    InitialCondition,
    PlantParameters,
    TimeVaryingPlant,
    to_predictor,
)
from .poly import long_division

__all__ = [
    "Signal",
    "RegressorHistory",
    "control_input",
    "SimulationTrace",
    "closed_loop_run",
    "rebuild_trace",
    "tracking_error",
    "IdentityReport",
    "check_error_identities",
]


class Signal:
    """Scalar signal of integer time.

    kinds: ``zero``, ``constant(value)``, ``cosine(amplitude, frequency, phase)``,
    ``windowed-cosine(amplitude, frequency, t_start, t_end, phase)`` (nonzero
    for ``t_start < t <= t_end``), ``pulse(amplitude, at)``,
    ``samples(values, t_first)``.  ``shift`` evaluates the signal at ``t - shift``.
    """

    KINDS = ("zero", "constant", "cosine", "windowed-cosine", "pulse", "samples")

    def __init__(self, kind: str = "zero", shift: int = 0, **params):
        if kind not in self.KINDS:
            raise ValueError(f"unknown signal kind {kind!r}")
        self.kind = kind
        self.shift = int(shift)
        self.params = params
        p = params
        if kind == "zero":
            self._f = lambda t: 0.0
            self.sup = 0.0
        elif kind == "constant":
            v = float(p["value"])
            self._f = lambda t: v
            self.sup = abs(v)
        elif kind == "cosine":
            A, w, ph = float(p["amplitude"]), float(p["frequency"]), float(p.get("phase", 0.0))
            self._f = lambda t: A * math.cos(w * t + ph)
            self.sup = abs(A)
        elif kind == "windowed-cosine":
            A, w, ph = float(p["amplitude"]), float(p["frequency"]), float(p.get("phase", 0.0))
            lo, hi = p["t_start"], p["t_end"]
            self._f = lambda t: A * math.cos(w * t + ph) if lo < t <= hi else 0.0
            self.sup = abs(A)
        elif kind == "pulse":
            A, at = float(p["amplitude"]), int(p["at"])
            self._f = lambda t: A if t == at else 0.0
            self.sup = abs(A)
        else:
            vals = np.asarray(p["values"], dtype=float)
            first = int(p.get("t_first", 0))
            if not np.all(np.isfinite(vals)):
                raise ValueError("signal samples must be finite")

            def f(t):
                i = t - first
                if not 0 <= i < vals.size:
                    raise IndexError(f"sample signal has no value at t={t}")
                return float(vals[i])

            self._f = f
            self.sup = float(np.max(np.abs(vals))) if vals.size else 0.0

    def __call__(self, t: int) -> float:
        return self._f(t - self.shift)

    def spec(self) -> dict:
        out = {"kind": self.kind}
        if self.shift:
            out["shift"] = self.shift
        for k, v in self.params.items():
            out[k] = list(map(float, v)) if k == "values" else v
        return out

    @classmethod
    def from_spec(cls, spec: Mapping | None) -> "Signal":
        if spec is None:
            return cls("zero")
        spec = dict(spec)
        return cls(spec.pop("kind"), **spec)

    def __eq__(self, other):
        return isinstance(other, Signal) and self.spec() == other.spec()

    def __repr__(self):
        return f"Signal({self.spec()})"


class RegressorHistory:
    """Output/input record on a fixed time axis with regressor extraction.

    ``phi(t) = [y(t), ..., y(t-n+1), u(t), ..., u(t-m-d+1)]``.  Storage covers
    ``t_start .. t_end`` so every lagged regressor needed by the diagnostics
    stays available after the run.
    """

    def __init__(self, n: int, m: int, d: int, t_start: int, t_end: int):
        self.n, self.m, self.d = n, m, d
        self.t_start, self.t_end = t_start, t_end
        size = t_end - t_start + 1
        self.y = np.full(size, np.nan)
        self.u = np.full(size, np.nan)
        self._ky = np.arange(n)
        self._ku = np.arange(m + d)

    @classmethod
    def from_initial_condition(cls, x0: InitialCondition, n, m, d, t0, t_end):
        x0.check(n, m, d)
        depth = max(n + d - 1, m + 2 * d - 1)
        h = cls(n, m, d, t0 - depth, t_end)
        for k, v in enumerate(x0.y_hist, start=1):
            h.set_y(t0 - k, v)
        for k, v in enumerate(x0.u_hist, start=1):
            h.set_u(t0 - k, v)
        return h

    def set_y(self, t, v):
        self.y[t - self.t_start] = v

    def set_u(self, t, v):
        self.u[t - self.t_start] = v

    def y_at(self, t):
        return self.y[t - self.t_start]

    def u_at(self, t):
        return self.u[t - self.t_start]

    def phi(self, t: int) -> np.ndarray:
        i = t - self.t_start
        return np.concatenate((self.y[i - self._ky], self.u[i - self._ku]))

    def y_past(self, t, count):
        """``[y(t-1), ..., y(t-count)]``."""
        i = t - self.t_start
        return self.y[i - 1 - np.arange(count)]

    def u_delayed(self, t, d, count):
        """``[u(t-d), ..., u(t-d-count+1)]``."""
        i = t - self.t_start - d
        return self.u[i - np.arange(count)]


def control_input(theta_hat, phi, ystar_ahead: float, n: int,
                  beta0_floor: float = 0.0) -> float:
    """``u(t)`` solving ``theta_hat(t) @ phi(t) = y*(t+d)``.

    ``phi`` is the regressor at ``t``; its ``u(t)`` slot (index ``n``) is ignored.
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    beta0 = theta_hat[n]
    if not abs(beta0) >= beta0_floor or beta0 == 0.0:
        raise RuntimeError(
            f"beta_0 estimate {beta0!r} violates the box bound {beta0_floor!r}"
        )
    rest = float(theta_hat @ phi) - beta0 * phi[n]
    return (ystar_ahead - rest) / beta0


@dataclass
class SimulationTrace:
    """Everything produced by one closed-loop run.

    Per-row arrays cover ``t = t0 .. T``; ``theta_hat`` and ``V`` have one
    extra leading row for ``t0 - 1``.  Row ``t`` holds ``e(t)`` and the gate
    and update size of the step that produced ``theta_hat(t)``.  ``theta_star``
    row ``t`` is the predictor parameter generating ``y(t+1)``, the target of
    the next update.  ``w`` and ``wbar`` live on the full history axis; ``w``
    before ``t0`` is the disturbance implied by the initial condition.
    """

    n: int
    m: int
    d: int
    t0: int
    T: int
    history: RegressorHistory
    ystar_full: np.ndarray
    w: np.ndarray
    wbar: np.ndarray
    e: np.ndarray
    rho: np.ndarray
    nu: np.ndarray
    theta_hat: np.ndarray
    theta_star: np.ndarray
    V: np.ndarray
    box_norm: float
    delta: float
    time_invariant: bool
    plant: TimeVaryingPlant | None = field(default=None, repr=False)
    estimator: EstimatorConfig | None = field(default=None, repr=False)
    x0: InitialCondition | None = field(default=None, repr=False)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.t0, self.T + 1)

    @property
    def ystar(self) -> np.ndarray:
        """Reference per row; ``ystar_full`` continues ``d`` steps past ``T``."""
        return self.ystar_full[: self.T - self.t0 + 1]

    @property
    def y(self) -> np.ndarray:
        return self.history.y[self.t0 - self.history.t_start:]

    @property
    def u(self) -> np.ndarray:
        return self.history.u[self.t0 - self.history.t_start:]

    @property
    def eps(self) -> np.ndarray:
        """Tracking error ``y* - y`` per row."""
        return self.ystar - self.y

    def _row(self, t):
        return t - self.t0

    def phi(self, t):
        return self.history.phi(t)

    def y_at(self, t):
        return self.history.y_at(t)

    def u_at(self, t):
        return self.history.u_at(t)

    def ystar_at(self, t):
        return self.ystar_full[self._row(t)]

    def eps_at(self, t):
        return self.ystar_at(t) - self.y_at(t)

    def e_at(self, t):
        return self.e[self._row(t)]

    def rho_at(self, t):
        return self.rho[self._row(t)]

    def nu_at(self, t):
        """Update size that produced ``theta_hat(t)``; zero before ``t0``."""
        if t < self.t0:
            return 0.0
        return self.nu[self._row(t)]

    def theta_at(self, t):
        return self.theta_hat[t - self.t0 + 1]

    def theta_star_at(self, t):
        return self.theta_star[self._row(t)]

    def w_at(self, t):
        return self.w[t - self.history.t_start]

    def wbar_at(self, t):
        return self.wbar[t - self.history.t_start]


def closed_loop_run(plant: TimeVaryingPlant, est: EstimatorConfig, ystar: Signal,
                    w: Signal, x0: InitialCondition, t0: int, T: int,
                    freeze_estimate: bool = False) -> SimulationTrace:
    """Run the adaptive controller on ``plant`` from ``t0`` to ``T``.

    ``freeze_estimate`` keeps ``theta_hat`` at ``theta0`` (diagnostic use only).
    """
    n, m, d = plant.n, plant.m, plant.d
    if T <= t0:
        raise ValueError("horizon T must exceed t0")
    dim = n + m + d
    if est.box.dim != dim or est.box.beta0_index != n:
        raise ValueError(f"parameter box has dimension {est.box.dim}, plant needs {dim}")
    x0.check(n, m, d)
    if not np.all(np.isfinite(x0.vector)):
        raise ValueError("initial condition must be finite")
    hist = RegressorHistory.from_initial_condition(x0, n, m, d, t0, T)
    rows = T - t0 + 1
    ys, w_full, wbar_full, theta_star = _exogenous(plant, hist, ystar, w, t0, T)
    ys_ahead = ys[d:]
    ts = hist.t_start

    e = np.zeros(rows)
    rho = np.zeros(rows, dtype=np.int8)
    nu = np.zeros(rows)
    theta = np.empty((rows + 1, dim))
    theta[0] = est.theta0
    beta0_floor = est.box.beta0_min_abs * (1.0 - 1e-12)

    def advance(t):
        p = plant.at(t)
        yv = (-np.dot(p.a, hist.y_past(t, p.n))
              + np.dot(p.b, hist.u_delayed(t, d, p.m + 1)) + w_full[t - ts])
        if not math.isfinite(yv):
            raise FloatingPointError(f"plant output became non-finite at t={t}")
        hist.set_y(t, yv)

    def update(t_new):
        k = t_new - t0
        th_old = theta[k]
        if freeze_estimate:
            theta[k + 1] = th_old
            e[k] = hist.y_at(t_new) - hist.phi(t_new - d) @ th_old
            return
        st = estimator_update(th_old, hist.phi(t_new - d), hist.y_at(t_new), est)
        e[k], rho[k], nu[k] = st.e, st.rho, st.nu
        theta[k + 1] = st.theta_hat

    advance(t0)
    update(t0)
    for t in range(t0, T + 1):
        hist.set_u(t, 0.0)
        uv = control_input(theta[t - t0 + 1], hist.phi(t), ys_ahead[t - t0], n, beta0_floor)
        if not math.isfinite(uv):
            raise FloatingPointError(f"control input became non-finite at t={t}")
        hist.set_u(t, uv)
        if t == T:
            break
        advance(t + 1)
        update(t + 1)

    return _assemble(plant, est, x0, t0, T, hist, ys, w_full, wbar_full,
                     e, rho, nu, theta, theta_star)


def _exogenous(plant, hist, ystar, w, t0, T):
    """Reference, disturbance (with the part implied by ``x0``), ``wbar`` and
    ``theta*`` rows for a run on ``hist``'s time axis."""
    d = plant.d
    ts = hist.t_start
    full = T + d - ts + 1
    w_full = np.full(full, np.nan)
    wbar_full = np.full(full, np.nan)
    ys = np.array([ystar(t) for t in range(t0, T + d + 1)], dtype=float)
    for t in range(t0, T + d + 1):
        w_full[t - ts] = w(t)
    if not (np.all(np.isfinite(ys)) and np.all(np.isfinite(w_full[t0 - ts:]))):
        raise ValueError("reference and disturbance signals must be finite")

    # disturbance implied by x0 before the start (zero for a consistent x0)
    for s in range(t0 - d + 1, t0):
        p = plant.at(s)
        w_full[s - ts] = hist.y_at(s) - (
            -np.dot(p.a, hist.y_past(s, p.n)) + np.dot(p.b, hist.u_delayed(s, d, p.m + 1))
        )

    F_fixed = long_division(plant.at(t0).A, d)[0] if plant.time_invariant else None
    for t in range(t0 - d, T + 1):
        F = F_fixed if F_fixed is not None else long_division(plant.at(t + d).A, d)[0]
        wbar_full[t - ts] = sum(F[i] * w_full[t + d - i - ts] for i in range(d))

    rows = T - t0 + 1
    if plant.time_invariant:
        theta_star = np.tile(to_predictor(plant.at(t0)).vector, (rows, 1))
    else:
        theta_star = np.array([plant.theta_star(t + 1) for t in range(t0, T + 1)])
    return ys, w_full, wbar_full, theta_star


def _assemble(plant, est, x0, t0, T, hist, ys, w_full, wbar_full, e, rho, nu, theta,
              theta_star):
    V = np.empty(theta.shape[0])
    V[0] = float(np.sum((theta[0] - theta_star[0]) ** 2))
    V[1:] = np.sum((theta[1:] - theta_star) ** 2, axis=1)
    return SimulationTrace(
        n=plant.n, m=plant.m, d=plant.d, t0=t0, T=T, history=hist, ystar_full=ys,
        w=w_full, wbar=wbar_full, e=e, rho=rho, nu=nu, theta_hat=theta,
        theta_star=theta_star, V=V, box_norm=est.box_norm, delta=est.delta,
        time_invariant=plant.time_invariant, plant=plant, estimator=est, x0=x0,
    )


def rebuild_trace(plant: TimeVaryingPlant, est: EstimatorConfig, ystar: Signal, w: Signal,
                  x0: InitialCondition, t0: int, T: int, y, u, e, rho, nu,
                  theta_hat) -> SimulationTrace:
    """Trace from recorded rows ``t0 .. T`` plus the run's configuration.

    ``theta_hat`` holds rows ``t0 .. T``; the row for ``t0 - 1`` is the
    configured initial estimate.  Recorded ``w`` is not needed since the
    disturbance is recomputed from its signal, so a recorded file can be
    checked against the configuration that claims to have produced it.
    """
    n, m, d = plant.n, plant.m, plant.d
    rows = T - t0 + 1
    arrays = [np.asarray(v, dtype=float) for v in (y, u, e, rho, nu)]
    if any(a.shape != (rows,) for a in arrays):
        raise ValueError(f"recorded columns must have {rows} rows")
    theta_hat = np.atleast_2d(np.asarray(theta_hat, dtype=float))
    if theta_hat.shape != (rows, n + m + d):
        raise ValueError(f"recorded estimates must be {rows} x {n + m + d}")
    hist = RegressorHistory.from_initial_condition(x0, n, m, d, t0, T)
    i0 = t0 - hist.t_start
    hist.y[i0:] = arrays[0]
    hist.u[i0:] = arrays[1]
    ys, w_full, wbar_full, theta_star = _exogenous(plant, hist, ystar, w, t0, T)
    theta = np.vstack((est.theta0, theta_hat))
    return _assemble(plant, est, x0, t0, T, hist, ys, w_full, wbar_full, arrays[2],
                     arrays[3].astype(np.int8), arrays[4], theta, theta_star)


@dataclass
class IdentityReport:
    eps: np.ndarray
    eps_identity_residual: float
    e_identity_residual: float
    checked: bool


def check_error_identities(trace: SimulationTrace, theta_star=None) -> IdentityReport:
    """Residuals of the tracking- and prediction-error identities.

        eps(t) = phi(t-d) @ (theta_hat(t-d) - theta*) - wbar(t-d),  t >= t0 + d
        e(t)   = -phi(t-d) @ (theta_hat(t-1) - theta*) + wbar(t-d), t >= t0

    Requires a time-invariant plant; otherwise only ``eps`` is returned.
    """
    eps = trace.eps
    if not trace.time_invariant and theta_star is None:
        return IdentityReport(eps, math.nan, math.nan, False)
    ts = trace.theta_star_at(trace.t0) if theta_star is None else np.asarray(theta_star)
    d = trace.d
    r_eps = 0.0
    r_e = 0.0
    for t in range(trace.t0, trace.T + 1):
        phi = trace.phi(t - d)
        wb = trace.wbar_at(t - d)
        pred_e = -phi @ (trace.theta_at(t - 1) - ts) + wb
        r_e = max(r_e, abs(trace.e_at(t) - pred_e))
        if t >= trace.t0 + d:
            pred_eps = phi @ (trace.theta_at(t - d) - ts) - wb
            r_eps = max(r_eps, abs(trace.eps_at(t) - pred_eps))
    return IdentityReport(eps, r_eps, r_e, True)


def tracking_error(trace: SimulationTrace) -> np.ndarray:
    """``eps(t) = y*(t) - y(t)`` for rows ``t0 .. T``."""
    return trace.eps
