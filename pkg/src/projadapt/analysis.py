"""Closed-loop models of the adaptive loop and empirical bound fitting.

Three regressor recursions are built from a finished trace:

* good model: ``phi(t+1) = A_g phi(t) + (future tracking errors, y*, w)``,
  with ``A_g`` depending only on the true plant;
* crude model: ``phi(t+1) = A_b(t) phi(t) + B_3(t) y*(t+d+1) + B_4(t) w(t+1)``,
  using the control law with ``theta_hat(t+1)``;
* perturbed model: ``phi(t+1) = A_g phi(t) + sum_j Delta_j(t) phi(t-j) + eta(t)``,
  where the ``Delta_j`` are rank-one terms scaled by recent update sizes.

In these models the tracking deviation is ``y - y*`` (the negative of the
trace's ``eps``); only magnitudes enter the bounds, so the sign is immaterial
there, but the reconstructions need it to be exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.signal import lfilter

from .controller import SimulationTrace
from .model import PlantParameters, TimeVaryingPlant

__all__ = [
    "GoodModel",
    "CrudeModel",
    "Prop3Decomposition",
    "ExtendedSystem",
    "BoundFit",
    "TransitionDecay",
    "L2Report",
    "DriftReport",
    "build_good_model",
    "good_model_residual",
    "build_crude_model",
    "crude_model_residual",
    "crude_model_norms",
    "crude_model_norms_batch",
    "decompose_prop3",
    "build_extended_system",
    "extended_residual",
    "transition_decay",
    "run_decay_profile",
    "batch_closed_loop",
    "homogeneous_decay_batch",
    "worst_direction_search",
    "decay_ratio_score",
    "crude_norm_score",
    "profiles_from_norms",
    "fit_convolution_bound",
    "l2_tracking_check",
    "drift_budget",
]


@dataclass(frozen=True, eq=False)
class GoodModel:
    A_g: np.ndarray
    B_1: np.ndarray
    B_2: np.ndarray
    plant: PlantParameters


def _unit(k, dim):
    v = np.zeros(dim)
    v[k] = 1.0
    return v


def build_good_model(p: PlantParameters) -> GoodModel:
    """``A_g`` with y-shift rows, a u(t+1) row from the plant, and u-shift rows.

    The u(t+1) row carries ``a_i / b_0`` on ``y(t+d+1-i)`` for ``i > d`` and
    ``-b_i / b_0`` on ``u(t+1-i)``; the eigenvalues are the zeros of B plus
    ``n + d`` at the origin.  With ``n = 0`` there is no output slot and
    ``B_1`` is zero.
    """
    n, m, d = p.n, p.m, p.d
    dim = n + m + d
    b0 = p.b[0]
    A = np.zeros((dim, dim))
    for k in range(1, n):
        A[k, k - 1] = 1.0
    for i in range(d + 1, n + 1):
        A[n, i - d - 1] = p.a[i - 1] / b0
    for i in range(1, m + 1):
        A[n, n + i - 1] = -p.b[i] / b0
    for k in range(n + 1, dim):
        A[k, k - 1] = 1.0
    B1 = _unit(0, dim) if n > 0 else np.zeros(dim)
    return GoodModel(A, B1, _unit(n, dim), p)


def _fixed_plant(trace: SimulationTrace) -> PlantParameters:
    if not trace.time_invariant or trace.plant is None:
        raise ValueError("closed-loop model identities need a time-invariant plant")
    return trace.plant.at(trace.t0)


def _dev(trace, s):
    return trace.y_at(s) - trace.ystar_at(s)


def _a(p, i):
    if i == 0:
        return 1.0
    return p.a[i - 1] if i <= p.n else 0.0


def good_model_residual(trace: SimulationTrace, t: int, gm: GoodModel | None = None) -> float:
    """Norm of ``phi(t+1)`` minus the good-model right-hand side, valid for
    ``t0 - 1 <= t <= T - d - 1``."""
    p = gm.plant if gm is not None else _fixed_plant(trace)
    gm = gm or build_good_model(p)
    d, b0 = p.d, p.b[0]
    rhs = gm.A_g @ trace.phi(t) + gm.B_1 * (_dev(trace, t + 1) + trace.ystar_at(t + 1))
    s = 0.0
    for j in range(d + 1):
        s += _a(p, d - j) / b0 * (_dev(trace, t + 1 + j) + trace.ystar_at(t + 1 + j))
    rhs = rhs + gm.B_2 * (s - trace.w_at(t + d + 1) / b0)
    return float(np.linalg.norm(trace.phi(t + 1) - rhs))


@dataclass(frozen=True, eq=False)
class CrudeModel:
    A_b: np.ndarray
    B_3: np.ndarray
    B_4: np.ndarray


def build_crude_model(theta_next, p: PlantParameters, beta0_floor: float = 0.0) -> CrudeModel:
    """Matrices of the crude model built from ``theta_hat(t+1)`` and the plant
    producing ``y(t+1)``."""
    theta_next = np.asarray(theta_next, dtype=float)
    n, m, d = p.n, p.m, p.d
    dim = n + m + d
    beta0 = theta_next[n]
    if beta0 == 0.0 or abs(beta0) < beta0_floor:
        raise ValueError(f"beta_0 estimate {beta0!r} is outside the box")
    # y(t+1) = plant_row @ phi(t) + w(t+1)
    plant_row = np.zeros(dim)
    plant_row[:n] = -np.array(p.a)
    for i in range(m + 1):
        plant_row[n + d - 1 + i] = p.b[i]
    # y*(t+d+1) = ctrl_row @ phi(t) + alpha_0 y(t+1) + beta_0 u(t+1)
    ctrl_row = np.zeros(dim)
    for i in range(1, n):
        ctrl_row[i - 1] = theta_next[i]
    for i in range(1, m + d):
        ctrl_row[n + i - 1] = theta_next[n + i]
    alpha0 = theta_next[0] if n > 0 else 0.0
    A = np.zeros((dim, dim))
    B3 = np.zeros(dim)
    B4 = np.zeros(dim)
    if n > 0:
        A[0] = plant_row
        B4[0] = 1.0
    for k in range(1, n):
        A[k, k - 1] = 1.0
    A[n] = (-ctrl_row - alpha0 * plant_row) / beta0
    B3[n] = 1.0 / beta0
    B4[n] = -alpha0 / beta0 if n > 0 else 0.0
    for k in range(n + 1, dim):
        A[k, k - 1] = 1.0
    return CrudeModel(A, B3, B4)


def _crude_at(trace, t, p=None):
    if p is None:
        p = trace.plant.at(t + 1)
    return build_crude_model(trace.theta_at(t + 1), p)


def crude_model_residual(trace: SimulationTrace, t: int, cm: CrudeModel | None = None) -> float:
    """Valid for ``t0 - 1 <= t <= T - 1``; uses the plant in force at ``t+1``."""
    cm = cm or _crude_at(trace, t)
    rhs = cm.A_b @ trace.phi(t) + cm.B_3 * trace.ystar_at(t + trace.d + 1) + cm.B_4 * trace.w_at(t + 1)
    return float(np.linalg.norm(trace.phi(t + 1) - rhs))


def crude_model_norms(trace: SimulationTrace) -> tuple[float, float, float]:
    """``max_t`` of ``||A_b(t)||, ||B_3(t)||, ||B_4(t)||`` over ``t0-1 .. T-1``."""
    na = nb3 = nb4 = 0.0
    for t in range(trace.t0 - 1, trace.T):
        cm = _crude_at(trace, t)
        na = max(na, float(np.linalg.norm(cm.A_b, 2)))
        nb3 = max(nb3, float(np.linalg.norm(cm.B_3)))
        nb4 = max(nb4, float(np.linalg.norm(cm.B_4)))
    return na, nb3, nb4


def crude_model_norms_batch(theta_next, p: PlantParameters) -> np.ndarray:
    """``||A_b||, ||B_3||, ||B_4||`` for a stack of estimates ``theta_hat(t+1)``.

    ``theta_next`` has shape ``(..., n+m+d)``; the result has shape ``(..., 3)``.
    Same matrices as :func:`build_crude_model`, with the spectral norm taken
    from the largest eigenvalue of ``A_b^T A_b``.
    """
    th = np.asarray(theta_next, dtype=float)
    n, m, d = p.n, p.m, p.d
    dim = n + m + d
    lead = th.shape[:-1]
    beta0 = th[..., n]
    if np.any(beta0 == 0.0):
        raise ValueError("beta_0 estimate is zero")
    plant_row = np.zeros(dim)
    plant_row[:n] = -np.array(p.a)
    plant_row[n + d - 1:n + d + m] = p.b
    ctrl = np.zeros(lead + (dim,))
    if n > 1:
        ctrl[..., : n - 1] = th[..., 1:n]
    if m + d > 1:
        ctrl[..., n: n + m + d - 1] = th[..., n + 1:]
    alpha0 = th[..., 0] if n > 0 else np.zeros(lead)
    A = np.zeros(lead + (dim, dim))
    if n > 0:
        A[..., 0, :] = plant_row
    for k in range(1, n):
        A[..., k, k - 1] = 1.0
    A[..., n, :] = (-ctrl - alpha0[..., None] * plant_row) / beta0[..., None]
    for k in range(n + 1, dim):
        A[..., k, k - 1] = 1.0
    gram = np.swapaxes(A, -1, -2) @ A
    na = np.sqrt(np.maximum(np.linalg.eigvalsh(gram)[..., -1], 0.0))
    nb3 = 1.0 / np.abs(beta0)
    nb4 = np.sqrt(1.0 + (alpha0 / beta0) ** 2) if n > 0 else np.zeros(lead)
    return np.stack((na, nb3, nb4), axis=-1)


@dataclass
class Prop3Decomposition:
    t: int
    Delta: list
    eta: np.ndarray
    eta0: dict
    Dbar1: np.ndarray
    Dbar2: dict
    nubar: dict
    residual: float
    scale: float
    dbar_norm_error: float
    nubar_slack: float
    eta0_slack: float
    delta_bound_slack: float
    crude: CrudeModel = field(repr=False, default=None)


def _dbar(trace, s, B):
    """Rank-one term and its scalar parts at time ``s`` (uses e(s), phi(s-d))."""
    d = trace.d
    rho = int(trace.rho_at(s))
    dev = _dev(trace, s)
    phi = trace.phi(s - d)
    ns = float(phi @ phi)
    if rho and ns > 0:
        D = np.outer(B, phi) * (dev / ns)
        nub = abs(dev) / math.sqrt(ns)
    else:
        D = np.zeros((B.size, B.size))
        nub = 0.0
    eta0 = (1 - rho) * dev
    return D, nub, eta0


def decompose_prop3(trace: SimulationTrace, t: int, gm: GoodModel | None = None) -> Prop3Decomposition:
    """Perturbed-model decomposition at time ``t`` with all its bound slacks.

    Valid for ``t0 + d - 1 <= t <= T - d - 1``.  Returns the reconstruction
    residual of ``phi(t+1)`` together with:

    * ``dbar_norm_error``: max of ``| ||Dbar_i(s)|| - |nubar(s-1)| |``;
    * ``nubar_slack``: min of ``sum_{j=1..d} nu(s-j) - |nubar(s-1)|``;
    * ``eta0_slack``: min of ``(4||S|| + delta)/delta |wbar(s-d)| - |eta0(s)|``
      (``inf`` for ``delta = inf``);
    * ``delta_bound_slack``: min over ``j`` of the explicit per-plant bound on
      ``||Delta_j(t)||`` minus its actual norm.
    """
    d = trace.d
    if t < trace.t0 + d - 1:
        raise ValueError(f"t={t} is before the first valid step {trace.t0 + d - 1}")
    if t + d + 1 > trace.T:
        raise ValueError(f"t={t} needs lookahead to {t + d + 1}, trace ends at {trace.T}")
    p = gm.plant if gm is not None else _fixed_plant(trace)
    gm = gm or build_good_model(p)
    n, m = p.n, p.m
    dim = n + m + d
    b0 = p.b[0]

    Dbar1, nub1, eta0_1 = _dbar(trace, t + 1, gm.B_1)
    Dbar2, nubar, eta0 = {}, {}, {}
    for s in range(t + 1, t + d + 2):
        D, nb, e0 = _dbar(trace, s, gm.B_2)
        Dbar2[s], nubar[s], eta0[s] = D, nb, e0
    crude = build_crude_model(trace.theta_at(t + 1), p)

    Delta = [np.zeros((dim, dim)) for _ in range(d)]
    Delta[0] += (1.0 / b0) * Dbar2[t + d + 1] @ crude.A_b
    for k in range(d):
        Delta[k] += _a(p, k + 1) / b0 * Dbar2[t + d - k]
    Delta[d - 1] += Dbar1

    eta = gm.B_1 * (trace.ystar_at(t + 1) + eta0_1)
    s_y = sum(_a(p, d - j) * trace.ystar_at(t + 1 + j) for j in range(d + 1))
    s_e = sum(_a(p, d - j) * eta0[t + 1 + j] for j in range(d + 1))
    eta = eta + gm.B_2 * ((s_y + s_e - trace.w_at(t + d + 1)) / b0)
    eta = eta + (1.0 / b0) * Dbar2[t + d + 1] @ (
        crude.B_3 * trace.ystar_at(t + d + 1) + crude.B_4 * trace.w_at(t + 1))

    rhs = gm.A_g @ trace.phi(t) + eta
    for j in range(d):
        rhs = rhs + Delta[j] @ trace.phi(t - j)
    lhs = trace.phi(t + 1)
    residual = float(np.linalg.norm(lhs - rhs))
    phibar = np.concatenate([trace.phi(t - j) for j in range(d)])
    scale = 1.0 + float(np.linalg.norm(phibar)) + float(np.linalg.norm(lhs))

    def nu_window(s):
        # |nubar(s-1)| <= nu(s-1) + ... + nu(s-d); nu(k) is stored on row k+1
        return sum(trace.nu_at(s - j + 1) for j in range(1, d + 1))

    dbar_err = 0.0
    nubar_slack = math.inf
    eta0_slack = math.inf
    for s in range(t + 1, t + d + 2):
        dbar_err = max(dbar_err, abs(float(np.linalg.norm(Dbar2[s], 2)) - nubar[s]))
        nubar_slack = min(nubar_slack, nu_window(s) - nubar[s])
        if math.isfinite(trace.delta):
            k = (4.0 * trace.box_norm + trace.delta) / trace.delta
            eta0_slack = min(eta0_slack, k * abs(trace.wbar_at(s - d)) - abs(eta0[s]))
    if n > 0:
        dbar_err = max(dbar_err, abs(float(np.linalg.norm(Dbar1, 2)) - nub1))

    Ab_norm = float(np.linalg.norm(crude.A_b, 2))
    slack = math.inf
    for k in range(d):
        bound = abs(_a(p, k + 1) / b0) * nu_window(t + d - k)
        if k == 0:
            bound += abs(1.0 / b0) * nu_window(t + d + 1) * Ab_norm
        if k == d - 1 and n > 0:
            bound += nu_window(t + 1)
        slack = min(slack, bound - float(np.linalg.norm(Delta[k], 2)))

    return Prop3Decomposition(
        t=t, Delta=Delta, eta=eta, eta0=eta0, Dbar1=Dbar1, Dbar2=Dbar2, nubar=nubar,
        residual=residual, scale=scale, dbar_norm_error=dbar_err,
        nubar_slack=nubar_slack, eta0_slack=eta0_slack, delta_bound_slack=slack,
        crude=crude,
    )


@dataclass(frozen=True, eq=False)
class ExtendedSystem:
    A_nom: np.ndarray
    B_bar1: np.ndarray
    dim: int
    d: int

    def Delta(self, dec: Prop3Decomposition) -> np.ndarray:
        D = np.zeros_like(self.A_nom)
        p = self.dim
        for j, Dj in enumerate(dec.Delta):
            D[:p, j * p:(j + 1) * p] = Dj
        return D


def build_extended_system(gm: GoodModel) -> ExtendedSystem:
    """Block companion ``A_nom`` acting on ``[phi(t); ...; phi(t-d+1)]``."""
    d = gm.plant.d
    p = gm.A_g.shape[0]
    A = np.zeros((d * p, d * p))
    A[:p, :p] = gm.A_g
    for j in range(1, d):
        A[j * p:(j + 1) * p, (j - 1) * p:j * p] = np.eye(p)
    B = np.zeros((d * p, p))
    B[:p] = np.eye(p)
    return ExtendedSystem(A, B, p, d)


def phibar(trace: SimulationTrace, t: int, d: int | None = None) -> np.ndarray:
    d = trace.d if d is None else d
    return np.concatenate([trace.phi(t - j) for j in range(d)])


def extended_residual(trace, t, ext: ExtendedSystem, dec: Prop3Decomposition) -> tuple[float, float]:
    """Residual of ``phibar(t+1) = (A_nom + Delta(t)) phibar(t) + B_bar1 eta(t)``
    and the matching scale ``1 + ||phibar(t)|| + ||phibar(t+1)||``."""
    x = phibar(trace, t)
    x1 = phibar(trace, t + 1)
    r = x1 - (ext.A_nom + ext.Delta(dec)) @ x - ext.B_bar1 @ dec.eta
    return float(np.linalg.norm(r)), 1.0 + float(np.linalg.norm(x)) + float(np.linalg.norm(x1))


@dataclass
class TransitionDecay:
    gamma_hat: float
    mu_hat: float
    log_envelope: np.ndarray
    window: tuple[int, int]


def _upper_hull(xs, ys):
    pts = []
    for x, y in zip(xs, ys):
        while len(pts) >= 2:
            (x1, y1), (x2, y2) = pts[-2], pts[-1]
            if (y2 - y1) * (x - x1) <= (y - y1) * (x2 - x1):
                pts.pop()
            else:
                break
        pts.append((x, y))
    return pts


def transition_decay(trace: SimulationTrace, window: tuple[int, int] | None = None,
                     matrices: Sequence[np.ndarray] | None = None) -> TransitionDecay:
    """Exponential envelope ``||Phi(t, tau)|| <= gamma mu^(t - tau)`` over a window.

    ``Phi`` is the ordered product of ``A_nom + Delta(i)``.  For each lag ``s``
    the worst ``log ||Phi(tau + s, tau)||`` is taken over all ``tau``; ``mu``
    is the slope of the upper concave envelope of these points at three
    quarters of the window, and ``gamma`` is the smallest constant making the
    bound hold at every lag.  Windows shorter than two steps report
    ``mu = 1`` and ``gamma = max(1, ||A_nom + Delta||)``.

    ``matrices`` overrides the per-step matrices (e.g. ``A_nom`` alone).
    """
    if matrices is None:
        if window is None:
            window = (trace.t0 + trace.d - 1, trace.T - trace.d - 1)
        lo, hi = window
        if hi <= lo:
            raise ValueError("empty window")
        gm = build_good_model(_fixed_plant(trace))
        ext = build_extended_system(gm)
        matrices = [ext.A_nom + ext.Delta(decompose_prop3(trace, i, gm)) for i in range(lo, hi)]
    else:
        if len(matrices) == 0:
            raise ValueError("empty window")
        window = window or (0, len(matrices))
    W = len(matrices)
    logenv = np.full(W + 1, -np.inf)
    logenv[0] = 0.0
    for tau in range(W):
        P = np.eye(matrices[0].shape[0])
        for s in range(1, W - tau + 1):
            P = matrices[tau + s - 1] @ P
            nrm = float(np.linalg.norm(P, 2))
            if nrm > 0:
                logenv[s] = max(logenv[s], math.log(nrm))
    if W < 2:
        g = max(1.0, math.exp(logenv[1])) if np.isfinite(logenv[1]) else 1.0
        return TransitionDecay(g, 1.0, logenv, window)
    finite = np.isfinite(logenv)
    xs = np.arange(W + 1)[finite]
    ys = logenv[finite]
    hull = _upper_hull(xs, ys)
    if len(hull) < 2:
        return TransitionDecay(1.0, 0.0, logenv, window)
    s_star = min(math.ceil(0.75 * W), hull[-1][0])
    slope = None
    for (x1, y1), (x2, y2) in zip(hull[:-1], hull[1:]):
        if x1 <= s_star <= x2:
            slope = (y2 - y1) / (x2 - x1)
            if s_star < x2:
                break
    if slope is None:
        (x1, y1), (x2, y2) = hull[-2], hull[-1]
        slope = (y2 - y1) / (x2 - x1)
    mu = math.exp(slope)
    log_gamma = float(np.max(ys - xs * slope))
    return TransitionDecay(math.exp(log_gamma), mu, logenv, window)


@dataclass
class DecayProfile:
    """Regressor norms and exogenous magnitudes of one run, for bound fitting."""

    phi_norm: np.ndarray       # ||phi(k)||, k = t0 .. T
    x0_norm: float
    drive: np.ndarray          # |y*(k+d)| + |w(k)|, k = t0 .. T


def run_decay_profile(trace: SimulationTrace) -> DecayProfile:
    """Extract what the convolution bound needs from a trace.

    The reference enters through its preview ``y*(k+d)``, since ``u(k)``
    already reacts to it.
    """
    ks = range(trace.t0, trace.T + 1)
    phin = np.array([np.linalg.norm(trace.phi(k)) for k in ks])
    drive = np.array([abs(trace.ystar_at(k + trace.d)) + abs(trace.w_at(k)) for k in ks])
    x0n = trace.x0.norm if trace.x0 is not None else 0.0
    return DecayProfile(phin, x0n, drive)


def batch_closed_loop(p: PlantParameters, est, x0s, T: int, t0: int = 0, ystar=None,
                      record_theta: bool = False, theta0s=None):
    """Many disturbance-free runs on one fixed plant, simulated side by side.

    ``x0s`` has one initial condition per row, laid out as
    :attr:`InitialCondition.vector`; ``ystar`` is a callable shared by all
    runs (default zero).  ``theta0s`` optionally gives each run its own
    initial estimate (projected onto the box); otherwise ``est.theta0`` is
    used.  The recursion is the one of :func:`closed_loop_run`
    with ``w = 0``; the disturbance implied by an inconsistent ``x0`` only
    enters before ``t0`` and does not change the run.

    Returns ``||phi(k)||`` for ``k = t0 .. T`` with shape ``(runs, T-t0+1)``,
    and with ``record_theta`` also ``theta_hat`` for ``t0-1 .. T`` with shape
    ``(runs, T-t0+2, dim)``.
    """
    n, m, d = p.n, p.m, p.d
    dim = n + m + d
    ny, nu_ = n + d - 1, m + 2 * d - 1
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    if x0s.shape[1] != ny + nu_:
        raise ValueError(f"initial conditions need {ny + nu_} entries, got {x0s.shape[1]}")
    if est.box.dim != dim:
        raise ValueError(f"parameter box has dimension {est.box.dim}, plant needs {dim}")
    R = x0s.shape[0]
    K = T - t0 + 1
    depth = max(ny, nu_)
    L = K + depth
    Y = np.zeros((R, L))
    U = np.zeros((R, L))
    # column j is time t0 - depth + j
    Y[:, depth - ny:depth] = x0s[:, :ny][:, ::-1]
    U[:, depth - nu_:depth] = x0s[:, ny:][:, ::-1]
    ahead = (np.zeros(K) if ystar is None
             else np.array([ystar(t + d) for t in range(t0, T + 1)], dtype=float))
    a = np.asarray(p.a, dtype=float)
    b = np.asarray(p.b, dtype=float)
    lo, hi = est.box.lower, est.box.upper
    gate_k = 2.0 * est.box_norm + est.delta
    if theta0s is None:
        theta = np.tile(est.theta0, (R, 1))
    else:
        theta = np.clip(np.atleast_2d(np.asarray(theta0s, dtype=float)), lo, hi)
        if theta.shape != (R, dim):
            raise ValueError(f"theta0s must have shape {(R, dim)}")
    thetas = np.empty((R, K + 1, dim)) if record_theta else None
    if record_theta:
        thetas[:, 0] = theta
    ky = np.arange(n)
    ku = np.arange(m + d)
    out = np.empty((R, K))

    def phi(j):
        return np.concatenate((Y[:, j - ky], U[:, j - ku]), axis=1)

    def advance(j):
        yv = U[:, j - d - np.arange(m + 1)] @ b
        if n:
            yv -= Y[:, j - 1 - np.arange(n)] @ a
        Y[:, j] = yv

    def update(j):
        nonlocal theta
        ph = phi(j - d)
        e = Y[:, j] - np.einsum("ij,ij->i", ph, theta)
        sq = np.einsum("ij,ij->i", ph, ph)
        nrm = np.sqrt(sq)
        if math.isinf(est.delta):
            on = nrm > 0.0
        else:
            on = np.abs(e) < gate_k * nrm
        on &= nrm > est.min_phi_norm
        step = np.where(on, e / np.where(on, sq, 1.0), 0.0)
        theta = np.minimum(np.maximum(theta + ph * step[:, None], lo), hi)
        if record_theta:
            thetas[:, j - depth + 1] = theta

    j0 = depth
    advance(j0)
    update(j0)
    for k in range(K):
        j = j0 + k
        U[:, j] = 0.0
        rest = np.einsum("ij,ij->i", phi(j), theta)
        U[:, j] = (ahead[k] - rest) / theta[:, n]
        out[:, k] = np.linalg.norm(phi(j), axis=1)
        if k == K - 1:
            break
        advance(j + 1)
        update(j + 1)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("regressor became non-finite in a batch run")
    return (out, thetas) if record_theta else out


def homogeneous_decay_batch(p: PlantParameters, est, x0s, T: int, t0: int = 0) -> np.ndarray:
    """``||phi(k)||`` for ``k = t0 .. T`` of zero-reference batch runs."""
    return batch_closed_loop(p, est, x0s, T, t0)


def worst_direction_search(score: Callable[[np.ndarray], np.ndarray], dim: int,
                           rng: np.random.Generator, n_samples: int = 512, n_rounds: int = 6,
                           n_keep: int = 16, spread: float = 0.3):
    """Unit vectors with the largest ``score``, by sampling plus refinement.

    ``score`` maps an array of unit vectors (one per row) to one value per
    row.  Directions are sampled uniformly on the sphere, then refined by
    ``n_rounds`` rounds of random perturbation around the ``n_keep`` best,
    with the perturbation shrinking each round.  Returns all evaluated
    directions and their scores, best first.
    """
    X = rng.standard_normal((n_samples, dim))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    S = np.asarray(score(X), dtype=float)
    per = max(1, n_samples // (2 * n_keep))
    for r in range(n_rounds):
        top = X[np.argsort(S)[-n_keep:]]
        cand = np.repeat(top, per, axis=0)
        cand = cand + (spread / (r + 1)) * rng.standard_normal(cand.shape)
        cand /= np.linalg.norm(cand, axis=1, keepdims=True)
        X = np.vstack((X, cand))
        S = np.concatenate((S, score(cand)))
    order = np.argsort(S)[::-1]
    return X[order], S[order]


def decay_ratio_score(p: PlantParameters, est, T: int, lam: float):
    """Score ``max_k ||phi(k)|| / lam^k`` of zero-reference runs from unit ``x0``.

    Without exogenous inputs the loop is invariant under scaling of ``x0``,
    so only its direction matters.
    """
    geo = lam ** -np.arange(T + 1)
    return lambda X: (homogeneous_decay_batch(p, est, X, T) * geo).max(axis=1)


def crude_norm_score(p: PlantParameters, est, T: int, ystar=None, which: int = 0,
                     x0_norm: float = 1.0):
    """Score ``max_t`` of one crude-model norm (0: A_b, 1: B_3, 2: B_4)."""
    def score(X):
        _, th = batch_closed_loop(p, est, x0_norm * X, T, ystar=ystar, record_theta=True)
        return crude_model_norms_batch(th[:, 1:], p)[..., which].max(axis=1)
    return score


def profiles_from_norms(phi_norms, x0_norm: float = 1.0) -> list:
    """Wrap rows of regressor norms from a homogeneous batch as profiles."""
    phi_norms = np.atleast_2d(phi_norms)
    zero = np.zeros(phi_norms.shape[1])
    return [DecayProfile(row, float(x0_norm), zero) for row in phi_norms]


def _bound_denominator(prof: DecayProfile, lam: float) -> np.ndarray:
    K = prof.phi_norm.size
    out = prof.x0_norm * lam ** np.arange(K)
    if np.any(prof.drive):
        out = out + lfilter([1.0], [1.0, -lam], prof.drive)
    return out


class _Stack:
    """Profiles of equal length stacked row-wise for vectorised ratios."""

    def __init__(self, profs):
        self.phi = np.array([p.phi_norm for p in profs])
        self.x0 = np.array([p.x0_norm for p in profs])
        self.drive = np.array([p.drive for p in profs])
        self.driven = bool(np.any(self.drive))

    def denominator(self, lam):
        K = self.phi.shape[1]
        den = self.x0[:, None] * lam ** np.arange(K)
        if self.driven:
            den = den + lfilter([1.0], [1.0, -lam], self.drive, axis=1)
        return den

    def ratios(self, lam):
        den = self.denominator(lam)
        r = np.zeros_like(self.phi)
        pos = self.phi > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            r[pos] = np.where(den[pos] > 0, self.phi[pos] / den[pos], np.inf)
        return r


def _stacks(profs):
    groups: dict = {}
    for p in profs:
        groups.setdefault(p.phi_norm.size, []).append(p)
    return [_Stack(g) for g in groups.values()]


def _as_profiles(runs):
    return [r if isinstance(r, DecayProfile) else run_decay_profile(r) for r in runs]


@dataclass
class BoundFit:
    feasible: bool
    c: float
    lam: float
    lambda_under: float
    grid: np.ndarray
    c_on_grid: np.ndarray
    admissible: np.ndarray
    fit_min_slack: float
    n_fit: int
    n_validate: int = 0
    violations: int = 0
    validate_worst_ratio: float = math.nan

    def check(self, runs) -> tuple[int, float]:
        """Pointwise violation count and worst ratio of further runs."""
        if not self.feasible:
            raise ValueError("no feasible bound to check against")
        violations, worst = 0, 0.0
        for st in _stacks(_as_profiles(runs)):
            bound = self.c * st.denominator(self.lam)
            violations += int(np.sum(st.phi > bound * (1.0 + 1e-12)))
            r = st.ratios(self.lam)
            worst = max(worst, float(r.max()) if r.size else 0.0)
        return violations, worst


def fit_convolution_bound(fit_runs, lambda_under: float, validate_runs=(),
                          grid_size: int = 400, tail_fraction: float = 0.25,
                          tail_margin: float = 0.5, full_scan: bool = False) -> BoundFit:
    """Fit ``(c, lam)`` in ``||phi(k)|| <= c lam^(k-t0) ||x0|| + sum c lam^(k-j) drive(j)``.

    ``fit_runs`` / ``validate_runs`` are traces or :class:`DecayProfile`s.
    For each ``lam`` on a grid over ``(lambda_under + 1e-3, 1)`` the needed
    ``c`` is the largest pointwise ratio on the fitting set.  A ``lam`` is
    admissible when in every fitting run the ratio over the final
    ``tail_fraction`` of the horizon stays below ``tail_margin`` times that
    run's peak ratio, i.e. the run has decayed faster than ``lam``.  The fit
    takes the smallest admissible ``lam``; validation runs are then checked
    pointwise against the fitted bound.  The scan stops at the first
    admissible grid point unless ``full_scan`` is set (later entries of
    ``c_on_grid`` are then NaN).
    """
    fit = _as_profiles(fit_runs)
    val = _as_profiles(validate_runs)
    if not fit:
        raise ValueError("need at least one fitting run")
    stacks = _stacks(fit)
    lo = lambda_under + 1e-3
    grid = np.linspace(lo, 1.0, grid_size + 1)[:-1] if lo < 1.0 else np.array([])
    cs = np.full(grid.size, np.nan)
    adm = np.zeros(grid.size, dtype=bool)
    chosen = None
    for gi, lam in enumerate(grid):
        c = 0.0
        ok = True
        for st in stacks:
            r = st.ratios(lam)
            K = r.shape[1]
            if K == 0:
                continue
            peak = r.max(axis=1)
            c = max(c, float(peak.max()))
            if not np.all(np.isfinite(peak)):
                ok = False
                continue
            tail = r[:, K - max(1, int(math.ceil(tail_fraction * K))):].max(axis=1)
            if np.any((peak > 0) & (tail > tail_margin * peak)):
                ok = False
        cs[gi] = c
        adm[gi] = ok and math.isfinite(c)
        if adm[gi] and chosen is None:
            chosen = gi
            if not full_scan:
                break
    if chosen is None:
        return BoundFit(False, math.inf, math.nan, lambda_under, grid, cs, adm, math.nan,
                        len(fit), len(val))
    lam, c = float(grid[chosen]), float(cs[chosen])
    if c == 0.0:
        c = np.finfo(float).tiny
    fit_slack = min(float(np.min(c * st.denominator(lam) - st.phi)) for st in stacks)
    out = BoundFit(True, c, lam, lambda_under, grid, cs, adm, fit_slack, len(fit), len(val))
    if val:
        out.violations, out.validate_worst_ratio = out.check(val)
    return out


@dataclass
class L2Report:
    passed: bool
    total: float
    tail_increment: float
    ratio: float
    cumulative: np.ndarray
    start: int


def l2_tracking_check(trace: SimulationTrace, tail_window: int = 100,
                      threshold: float = 1e-6) -> L2Report:
    """Square-summability of the tracking error for a disturbance-free run.

    Sums ``eps(k)^2`` from ``k = t0 + 2d - 1``; ``tail_increment`` is the sum
    over the final ``tail_window`` steps and ``ratio`` divides the total by
    ``||x0||^2 + sup |y*|^2``.
    """
    ts = trace.history.t_start
    if np.any(trace.w[trace.t0 - trace.d + 1 - ts:] != 0.0):
        raise ValueError("l2 tracking check needs a disturbance-free run")
    if not trace.time_invariant:
        raise ValueError("l2 tracking check needs a time-invariant plant")
    start = trace.t0 + 2 * trace.d - 1
    eps = trace.eps[start - trace.t0:]
    cum = np.cumsum(eps ** 2)
    total = float(cum[-1]) if cum.size else 0.0
    tail = float(np.sum(eps[-tail_window:] ** 2))
    x0n = trace.x0.norm if trace.x0 is not None else 0.0
    den = x0n ** 2 + float(np.max(np.abs(trace.ystar_full))) ** 2
    ratio = total / den if den > 0 else (0.0 if total == 0 else math.inf)
    ok = math.isfinite(total) and tail < threshold
    return L2Report(ok, total, tail, ratio, cum, start)


@dataclass
class DriftReport:
    total_variation: float
    worst_excess: float
    fits: bool | None
    increments: np.ndarray


def drift_budget(schedule, t1: int, t2: int, c0: float | None = None,
                 eps: float | None = None) -> DriftReport:
    """Total variation of ``theta*(t)`` on ``[t1, t2]`` and the affine budget test.

    ``schedule`` is a :class:`TimeVaryingPlant` or a callable returning the
    predictor parameter vector at ``t``.  The budget
    ``sum_{t=s1}^{s2-1} ||theta*(t+1) - theta*(t)|| <= c0 + eps (s2 - s1)``
    is checked on every sub-window of ``[t1, t2]``; ``worst_excess`` is the
    largest ``sum (increment - eps)`` over sub-windows, so the budget holds iff
    ``worst_excess <= c0``.
    """
    if t2 <= t1:
        raise ValueError("need t2 > t1")
    f: Callable = schedule.theta_star if isinstance(schedule, TimeVaryingPlant) else schedule
    th = np.array([np.asarray(f(t), dtype=float) for t in range(t1, t2 + 1)])
    inc = np.linalg.norm(np.diff(th, axis=0), axis=1)
    tv = float(inc.sum())
    if c0 is None or eps is None:
        return DriftReport(tv, math.nan, None, inc)
    best = cur = 0.0
    for g in inc - eps:
        cur = max(0.0, cur + g)
        best = max(best, cur)
    return DriftReport(tv, best, bool(best <= c0 + 1e-12), inc)
