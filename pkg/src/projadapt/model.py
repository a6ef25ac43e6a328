"""Plant descriptions, predictor form, admissible parameter boxes.

The plant is

    y(t) + a_1 y(t-1) + ... + a_n y(t-n) = b_0 u(t-d) + ... + b_m u(t-d-m) + w(t)

and its d-step predictor form is ``y(t+d) = phi(t) @ theta_star + wbar(t)`` with

    phi(t) = [y(t), ..., y(t-n+1), u(t), ..., u(t-m-d+1)].
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .poly import Polynomial, long_division, poly_mul, zeros_in_z

__all__ = [
    "PlantParameters",
    "PredictorParameters",
    "ParameterBox",
    "CoefficientBox",
    "TimeVaryingPlant",
    "InitialCondition",
    "to_predictor",
    "project_onto_box",
    "box_norm",
    "predictor_box",
    "check_assumption1",
    "Assumption1Report",
    "plant_step",
    "predictor_step",
    "wbar",
    "implied_disturbance",
    "consistent_initial_condition",
]


@dataclass(frozen=True)
class PlantParameters:
    """Coefficients of one plant: delay ``d``, ``a = [a_1..a_n]``, ``b = [b_0..b_m]``."""

    d: int
    a: tuple[float, ...]
    b: tuple[float, ...]

    def __init__(self, d, a, b):
        a = tuple(float(x) for x in a)
        b = tuple(float(x) for x in b)
        if int(d) != d or d < 1:
            raise ValueError(f"delay must be an integer >= 1, got {d!r}")
        if len(b) == 0 or b[0] == 0.0:
            raise ValueError("b_0 must be nonzero (the delay is exactly d)")
        object.__setattr__(self, "d", int(d))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return len(self.a)

    @property
    def m(self) -> int:
        return len(self.b) - 1

    @property
    def dim(self) -> int:
        """Length of the regressor ``phi``: ``n + m + d``."""
        return self.n + self.m + self.d

    @property
    def A(self) -> Polynomial:
        return Polynomial((1.0,) + self.a)

    @property
    def B(self) -> Polynomial:
        return Polynomial(self.b)

    def a_full(self) -> np.ndarray:
        """``[a_0=1, a_1, ..., a_n]``."""
        return np.array((1.0,) + self.a)

    def theta_ab(self) -> np.ndarray:
        return np.array(self.a + self.b)


@dataclass(frozen=True, eq=False)
class PredictorParameters:
    """``theta* = (alpha_0..alpha_{n-1}, beta_0..beta_{m+d-1})``."""

    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=float).ravel())
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float).ravel())
        if self.beta.size == 0:
            raise ValueError("beta needs at least beta_0")

    @property
    def n(self) -> int:
        return self.alpha.size

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate((self.alpha, self.beta))

    @classmethod
    def from_vector(cls, theta, n: int) -> "PredictorParameters":
        theta = np.asarray(theta, dtype=float)
        return cls(theta[:n], theta[n:])

    def __eq__(self, other):
        if not isinstance(other, PredictorParameters):
            return NotImplemented
        return self.n == other.n and np.array_equal(self.vector, other.vector)


def to_predictor(p: PlantParameters) -> PredictorParameters:
    """Map plant coefficients to predictor-form parameters."""
    F, G = long_division(p.A, p.d)
    beta = np.array(poly_mul(F, p.B).coeffs)
    alpha = np.array(G.coeffs[: p.n])
    return PredictorParameters(alpha, beta[: p.m + p.d])


@dataclass(frozen=True, eq=False)
class ParameterBox:
    """Axis-aligned box in predictor-parameter space.

    ``beta0_index`` (= n) locates beta_0, whose interval must exclude zero.
    """

    lower: np.ndarray
    upper: np.ndarray
    beta0_index: int

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if lo.shape != hi.shape:
            raise ValueError("lower and upper bounds have different lengths")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box bounds must be finite")
        if np.any(lo > hi):
            raise ValueError("box has lower > upper in some coordinate")
        k = self.beta0_index
        if not 0 <= k < lo.size:
            raise ValueError(f"beta0_index {k} out of range for dimension {lo.size}")
        if lo[k] <= 0.0 <= hi[k]:
            raise ValueError(
                f"beta_0 interval [{lo[k]}, {hi[k]}] must exclude zero"
            )

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def sign(self) -> int:
        return 1 if self.lower[self.beta0_index] > 0 else -1

    @property
    def beta0_min_abs(self) -> float:
        k = self.beta0_index
        return min(abs(self.lower[k]), abs(self.upper[k]))

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, theta, tol: float = 0.0) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.lower - tol) and np.all(theta <= self.upper + tol))

    def corners(self):
        for pick in itertools.product((0, 1), repeat=self.dim):
            yield np.where(np.array(pick) == 1, self.upper, self.lower)

    def sample(self, rng: np.random.Generator, size=None) -> np.ndarray:
        shape = (self.dim,) if size is None else (size, self.dim)
        return rng.uniform(self.lower, self.upper, size=shape)

    def __eq__(self, other):
        if not isinstance(other, ParameterBox):
            return NotImplemented
        return (
            self.beta0_index == other.beta0_index
            and np.array_equal(self.lower, other.lower)
            and np.array_equal(self.upper, other.upper)
        )


def project_onto_box(theta, S: ParameterBox) -> np.ndarray:
    """Euclidean projection onto the box (coordinate-wise clamp)."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != S.lower.shape:
        raise ValueError(f"dimension mismatch: {theta.shape} vs box {S.lower.shape}")
    return np.minimum(np.maximum(theta, S.lower), S.upper)


def box_norm(S: ParameterBox) -> float:
    """``max_{x in S} ||x||``, attained at the corner farthest from the origin."""
    return float(np.linalg.norm(np.maximum(np.abs(S.lower), np.abs(S.upper))))


@dataclass(frozen=True, eq=False)
class CoefficientBox:
    """Interval bounds on plant coefficients ``a_1..a_n`` and ``b_0..b_m``."""

    d: int
    a_lower: np.ndarray
    a_upper: np.ndarray
    b_lower: np.ndarray
    b_upper: np.ndarray

    def __post_init__(self):
        for name in ("a_lower", "a_upper", "b_lower", "b_upper"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).ravel())
        if self.a_lower.shape != self.a_upper.shape or self.b_lower.shape != self.b_upper.shape:
            raise ValueError("coefficient bounds have mismatched lengths")
        if self.b_lower.size == 0:
            raise ValueError("need bounds for at least b_0")
        if np.any(self.a_lower > self.a_upper) or np.any(self.b_lower > self.b_upper):
            raise ValueError("coefficient box has lower > upper")
        if self.b_lower[0] <= 0.0 <= self.b_upper[0]:
            raise ValueError("b_0 interval must exclude zero")

    @property
    def n(self) -> int:
        return self.a_lower.size

    @property
    def m(self) -> int:
        return self.b_lower.size - 1

    def corners(self):
        lo = np.concatenate((self.a_lower, self.b_lower))
        hi = np.concatenate((self.a_upper, self.b_upper))
        for pick in itertools.product((0, 1), repeat=lo.size):
            v = np.where(np.array(pick) == 1, hi, lo)
            yield PlantParameters(self.d, v[: self.n], v[self.n :])

    def sample(self, rng: np.random.Generator, size: int) -> list[PlantParameters]:
        a = rng.uniform(self.a_lower, self.a_upper, size=(size, self.n))
        b = rng.uniform(self.b_lower, self.b_upper, size=(size, self.m + 1))
        return [PlantParameters(self.d, a[i], b[i]) for i in range(size)]

    def contains(self, p: PlantParameters, tol: float = 1e-12) -> bool:
        a, b = np.array(p.a), np.array(p.b)
        return bool(
            a.shape == self.a_lower.shape
            and b.shape == self.b_lower.shape
            and np.all(a >= self.a_lower - tol)
            and np.all(a <= self.a_upper + tol)
            and np.all(b >= self.b_lower - tol)
            and np.all(b <= self.b_upper + tol)
        )


def _imul(x, y):
    prods = (x[0] * y[0], x[0] * y[1], x[1] * y[0], x[1] * y[1])
    return (min(prods), max(prods))


def predictor_box(cbox: CoefficientBox) -> ParameterBox:
    """Box in predictor space containing the image of a coefficient box.

    Uses interval arithmetic through the long-division recursion, so for
    ``d = 1`` it is exact (``alpha = -a``, ``beta = b``) and for ``d > 1``
    it is a conservative outer box.  beta_0 = b_0, so its interval carries over.
    """
    n, m, d = cbox.n, cbox.m, cbox.d
    a = [(1.0, 1.0)] + list(zip(cbox.a_lower, cbox.a_upper))
    r = [(0.0, 0.0)] * (n + d)
    r[0] = (1.0, 1.0)
    f = []
    for k in range(d):
        fk = r[k]
        f.append(fk)
        for i in range(1, n + 1):
            lo, hi = _imul(fk, a[i])
            r[k + i] = (r[k + i][0] - hi, r[k + i][1] - lo)
    g = r[d : d + n]
    b = list(zip(cbox.b_lower, cbox.b_upper))
    beta = [(0.0, 0.0)] * (m + d)
    for i, fi in enumerate(f):
        for j, bj in enumerate(b):
            lo, hi = _imul(fi, bj)
            beta[i + j] = (beta[i + j][0] + lo, beta[i + j][1] + hi)
    # f_0 = 1 exactly, so beta_0 is exactly b_0's interval
    beta[0] = b[0]
    lower = [x[0] for x in g] + [x[0] for x in beta]
    upper = [x[1] for x in g] + [x[1] for x in beta]
    return ParameterBox(np.array(lower), np.array(upper), beta0_index=n)


@dataclass
class Assumption1Report:
    ok: bool
    lambda_under: float
    n_samples: int
    violations: list = field(default_factory=list)


def check_assumption1(plants: Sequence[PlantParameters]) -> Assumption1Report:
    """Minimum-phase and fixed-sign-b_0 check over a sample of plants.

    ``lambda_under`` is the largest zero magnitude seen, a lower estimate of
    the worst case over the whole admissible set.
    """
    plants = list(plants)
    if not plants:
        raise ValueError("need at least one plant sample")
    lam = 0.0
    violations = []
    sign0 = math.copysign(1.0, plants[0].b[0])
    for k, p in enumerate(plants):
        z = zeros_in_z(p.B)
        r = float(np.max(np.abs(z))) if z.size else 0.0
        lam = max(lam, r)
        if r >= 1.0:
            violations.append((k, "zero outside open unit disk", r))
        if math.copysign(1.0, p.b[0]) != sign0:
            violations.append((k, "sign of b_0 changes", p.b[0]))
    return Assumption1Report(not violations, lam, len(plants), violations)


class TimeVaryingPlant:
    """Schedule ``t -> PlantParameters`` with fixed orders and delay.

    Build with :meth:`constant`, :meth:`sinusoidal` or :meth:`tabulated`.
    ``spec`` keeps a JSON-friendly description for config round trips.
    """

    def __init__(self, fn: Callable[[int], PlantParameters], d: int, n: int, m: int,
                 spec: Mapping | None = None, coef_box: CoefficientBox | None = None,
                 time_invariant: bool = False):
        self._fn = fn
        self.d, self.n, self.m = int(d), int(n), int(m)
        self.spec = dict(spec) if spec is not None else None
        self.coef_box = coef_box
        self.time_invariant = time_invariant
        self._cache: dict[int, PlantParameters] = {}

    def at(self, t: int) -> PlantParameters:
        p = self._cache.get(t)
        if p is None:
            p = self._fn(t)
            if (p.d, p.n, p.m) != (self.d, self.n, self.m):
                raise ValueError(f"schedule changed plant structure at t={t}")
            if len(self._cache) < 100_000:
                self._cache[t] = p
        return p

    def theta_star(self, t: int) -> np.ndarray:
        return to_predictor(self.at(t)).vector

    @classmethod
    def constant(cls, p: PlantParameters, coef_box: CoefficientBox | None = None):
        spec = {"kind": "constant", "d": p.d, "a": list(p.a), "b": list(p.b)}
        return cls(lambda t: p, p.d, p.n, p.m, spec, coef_box, time_invariant=True)

    @classmethod
    def sinusoidal(cls, d: int, a: Sequence, b: Sequence,
                   coef_box: CoefficientBox | None = None, shift: int = 0):
        """Each coefficient is a number or ``{"offset", "cos": [[amp, freq], ...],
        "sin": [[amp, freq], ...]}``, evaluated at integer ``t - shift``."""
        a_fns = [_coef_fn(c) for c in a]
        b_fns = [_coef_fn(c) for c in b]
        shift = int(shift)

        def fn(t):
            s = t - shift
            return PlantParameters(d, [f(s) for f in a_fns], [f(s) for f in b_fns])

        spec = {"kind": "sinusoidal", "d": d, "a": list(a), "b": list(b)}
        if shift:
            spec["shift"] = shift
        const = all(isinstance(c, (int, float)) for c in list(a) + list(b))
        return cls(fn, d, len(a), len(b) - 1, spec, coef_box, time_invariant=const)

    @classmethod
    def tabulated(cls, table: Mapping[int, PlantParameters],
                  coef_box: CoefficientBox | None = None):
        """Piecewise-constant schedule: the entry with the largest key <= t
        (the first entry before its own key)."""
        keys = sorted(int(k) for k in table)
        if not keys:
            raise ValueError("empty plant table")
        first = table[keys[0]]

        def fn(t):
            i = int(np.searchsorted(keys, t, side="right")) - 1
            return table[keys[max(i, 0)]]

        spec = {
            "kind": "tabulated",
            "d": first.d,
            "table": [{"t": k, "a": list(table[k].a), "b": list(table[k].b)} for k in keys],
        }
        return cls(fn, first.d, first.n, first.m, spec, coef_box,
                   time_invariant=len(keys) == 1)


def _coef_fn(c):
    if isinstance(c, (int, float)):
        v = float(c)
        return lambda t: v
    off = float(c.get("offset", 0.0))
    cos_terms = [(float(A), float(w)) for A, w in c.get("cos", [])]
    sin_terms = [(float(A), float(w)) for A, w in c.get("sin", [])]

    def f(t):
        return (off + sum(A * math.cos(w * t) for A, w in cos_terms)
                + sum(A * math.sin(w * t) for A, w in sin_terms))

    return f


@dataclass(frozen=True, eq=False)
class InitialCondition:
    """``y_hist = [y(t0-1), ..., y(t0-n-d+1)]``, ``u_hist = [u(t0-1), ..., u(t0-m-2d+1)]``."""

    y_hist: np.ndarray
    u_hist: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "y_hist", np.asarray(self.y_hist, dtype=float).ravel())
        object.__setattr__(self, "u_hist", np.asarray(self.u_hist, dtype=float).ravel())

    @classmethod
    def zeros(cls, n: int, m: int, d: int) -> "InitialCondition":
        return cls(np.zeros(n + d - 1), np.zeros(m + 2 * d - 1))

    def check(self, n: int, m: int, d: int) -> None:
        if self.y_hist.size != n + d - 1 or self.u_hist.size != m + 2 * d - 1:
            raise ValueError(
                f"initial condition needs {n + d - 1} outputs and {m + 2 * d - 1} inputs, "
                f"got {self.y_hist.size} and {self.u_hist.size}"
            )

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate((self.y_hist, self.u_hist))

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.vector))

    def __eq__(self, other):
        if not isinstance(other, InitialCondition):
            return NotImplemented
        return np.array_equal(self.y_hist, other.y_hist) and np.array_equal(self.u_hist, other.u_hist)


def plant_step(p: PlantParameters, y_past, u_delayed, w_t: float) -> float:
    """``y(t)`` from ``y_past = [y(t-1)..y(t-n)]`` and ``u_delayed = [u(t-d)..u(t-d-m)]``."""
    y_past = np.asarray(y_past, dtype=float)
    u_delayed = np.asarray(u_delayed, dtype=float)
    if y_past.size < p.n or u_delayed.size < p.m + 1:
        raise ValueError(
            f"plant step needs {p.n} past outputs and {p.m + 1} delayed inputs"
        )
    return float(-np.dot(p.a, y_past[: p.n]) + np.dot(p.b, u_delayed[: p.m + 1]) + w_t)


def predictor_step(theta_star, phi, wbar_t: float) -> float:
    """``y(t+d) = phi(t) @ theta* + wbar(t)``."""
    if isinstance(theta_star, PredictorParameters):
        theta_star = theta_star.vector
    theta_star = np.asarray(theta_star, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if theta_star.shape != phi.shape:
        raise ValueError(f"dimension mismatch: theta {theta_star.shape}, phi {phi.shape}")
    return float(phi @ theta_star + wbar_t)


def wbar(w, F: Polynomial, t: int) -> float:
    """``f_0 w(t+d) + f_1 w(t+d-1) + ... + f_{d-1} w(t+1)`` with ``d = len(F)``.

    ``w`` is a callable of integer time or a mapping.
    """
    get = w if callable(w) else w.__getitem__
    d = len(F)
    return float(sum(F[i] * get(t + d - i) for i in range(d)))


def implied_disturbance(p: PlantParameters, y_now: float, y_past, u_delayed) -> float:
    """The ``w(t)`` that makes a recorded output consistent with the plant."""
    return y_now - plant_step(p, y_past, u_delayed, 0.0)


def consistent_initial_condition(p: PlantParameters, rng: np.random.Generator,
                                 norm: float | None = 1.0) -> InitialCondition:
    """Random ``x_0`` generated by the plant itself with zero disturbance.

    The oldest ``n`` outputs and all inputs are drawn at random; the newest
    ``d - 1`` outputs follow from the plant recursion, so the predictor form
    holds from the first step without any implied pre-start disturbance.
    The result is scaled to the requested norm (``None`` keeps the raw draw).
    """
    n, m, d = p.n, p.m, p.d
    ny, nu = n + d - 1, m + 2 * d - 1
    # chronological order: index 0 is the oldest sample
    y = np.zeros(ny)
    u = rng.standard_normal(nu)
    y[:n] = rng.standard_normal(n)
    # y index k is time t0-ny+k; u index k is time t0-nu+k
    for k in range(n, ny):
        t_rel = k - ny
        y_past = [y[k - i] for i in range(1, n + 1)]
        u_del = [u[t_rel - d - i + nu] for i in range(m + 1)]
        y[k] = plant_step(p, y_past, u_del, 0.0)
    ic = InitialCondition(y[::-1], u[::-1])
    if norm is not None:
        s = ic.norm
        if s == 0.0:
            return ic
        ic = InitialCondition(ic.y_hist * (norm / s), ic.u_hist * (norm / s))
    return ic
