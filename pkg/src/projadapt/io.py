"""JSON experiment configs and CSV trace files.

Config layout (all keys except ``plant`` optional)::

    {
      "plant": {"kind": "constant", "d": 1, "a": [...], "b": [...]},
      "coefficient_box": {"d": 1, "a_lower": [...], "a_upper": [...],
                          "b_lower": [...], "b_upper": [...]},
      "box": {"lower": [...], "upper": [...]},
      "estimator": {"delta": "inf", "theta0": "midpoint", "min_phi_norm": 0.0},
      "reference": {"kind": "cosine", "amplitude": 1.0, "frequency": 1.0},
      "disturbance": {"kind": "zero"},
      "x0": {"y": [...], "u": [...]}  or  {"random": true, "norm": 1.0},
      "t0": 0, "T": 300, "seed": 0
    }

The plant ``kind`` is ``constant``, ``sinusoidal`` (coefficients as numbers
or ``{"offset", "cos", "sin"}`` terms, optional ``shift``) or ``tabulated``.
A predictor ``box`` may be given directly or derived from ``coefficient_box``.
In ``x0`` the newest input ``u(t0-1)`` may be ``null``; it is then computed
by the control law from ``theta0``, as if the controller had already run.
Infinite ``delta`` is written as the string ``"inf"``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .controller import (
    RegressorHistory,
    Signal,
    SimulationTrace,
    closed_loop_run,
    control_input,
    rebuild_trace,
)
from .estimator import EstimatorConfig
from .model import (
    CoefficientBox,
    InitialCondition,
    ParameterBox,
    PlantParameters,
    TimeVaryingPlant,
    consistent_initial_condition,
    predictor_box,
)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "plant_from_spec",
    "coefficient_box_to_dict",
    "coefficient_box_from_dict",
    "load_config",
    "save_config",
    "run_config",
    "trace_columns",
    "write_trace_csv",
    "read_trace_csv",
    "trace_from_csv",
]


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


def plant_from_spec(spec: Mapping, coef_box: CoefficientBox | None = None) -> TimeVaryingPlant:
    kind = spec.get("kind", "constant")
    try:
        if kind == "constant":
            return TimeVaryingPlant.constant(PlantParameters(spec["d"], spec["a"], spec["b"]),
                                             coef_box)
        if kind == "sinusoidal":
            return TimeVaryingPlant.sinusoidal(spec["d"], spec["a"], spec["b"], coef_box,
                                               shift=spec.get("shift", 0))
        if kind == "tabulated":
            table = {int(r["t"]): PlantParameters(spec["d"], r["a"], r["b"])
                     for r in spec["table"]}
            return TimeVaryingPlant.tabulated(table, coef_box)
    except KeyError as exc:
        raise ConfigError(f"plant spec is missing {exc}") from None
    raise ConfigError(f"unknown plant kind {kind!r}")


def coefficient_box_to_dict(cb: CoefficientBox) -> dict:
    return {"d": cb.d, "a_lower": cb.a_lower.tolist(), "a_upper": cb.a_upper.tolist(),
            "b_lower": cb.b_lower.tolist(), "b_upper": cb.b_upper.tolist()}


def coefficient_box_from_dict(d: Mapping) -> CoefficientBox:
    return CoefficientBox(d["d"], d["a_lower"], d["a_upper"], d["b_lower"], d["b_upper"])


def _delta_out(x: float):
    return "inf" if math.isinf(x) else x


def _delta_in(x) -> float:
    if isinstance(x, str):
        if x.strip().lower() in ("inf", "infinity"):
            return math.inf
        raise ConfigError(f"delta must be a positive number or 'inf', got {x!r}")
    return float(x)


@dataclass(eq=False)
class ExperimentConfig:
    plant: dict
    box: ParameterBox
    reference: Signal = field(default_factory=Signal)
    disturbance: Signal = field(default_factory=Signal)
    delta: float = math.inf
    theta0: Any = "midpoint"
    min_phi_norm: float = 0.0
    x0: dict = field(default_factory=lambda: {"random": True, "norm": 1.0})
    t0: int = 0
    T: int = 300
    seed: int = 0
    coefficient_box: CoefficientBox | None = None

    def __post_init__(self):
        self.validate()

    # --- structure -------------------------------------------------------
    @property
    def _midpoint(self) -> bool:
        if isinstance(self.theta0, str):
            if self.theta0 != "midpoint":
                raise ConfigError(f"theta0 must be a vector or 'midpoint', got {self.theta0!r}")
            return True
        return False

    def build_plant(self) -> TimeVaryingPlant:
        return plant_from_spec(self.plant, self.coefficient_box)

    def estimator(self) -> EstimatorConfig:
        th = self.box.midpoint if self._midpoint else np.asarray(self.theta0, float)
        return EstimatorConfig(self.box, th, self.delta, self.min_phi_norm)

    def initial_condition(self, plant: TimeVaryingPlant | None = None,
                          rng: np.random.Generator | None = None) -> InitialCondition:
        plant = plant or self.build_plant()
        n, m, d = plant.n, plant.m, plant.d
        if self.x0.get("random"):
            rng = rng or np.random.default_rng(self.seed)
            norm = self.x0.get("norm", 1.0)
            return consistent_initial_condition(plant.at(self.t0), rng, norm)
        y = [float(v) for v in self.x0.get("y", [0.0] * (n + d - 1))]
        u_raw = list(self.x0.get("u", [0.0] * (m + 2 * d - 1)))
        if any(v is None for v in u_raw[1:]):
            raise ConfigError("only the newest input u(t0-1) may be left to the controller")
        if u_raw and u_raw[0] is None:
            u_raw[0] = self._controller_input(y, [float(v) for v in u_raw[1:]], n, m, d)
        return InitialCondition(y, [float(v) for v in u_raw])

    def _controller_input(self, y, u_older, n, m, d) -> float:
        t = self.t0 - 1
        depth = max(n + d - 1, m + 2 * d - 1)
        h = RegressorHistory(n, m, d, self.t0 - depth, self.t0)
        for k, v in enumerate(y, start=1):
            h.set_y(self.t0 - k, v)
        for k, v in enumerate(u_older, start=2):
            h.set_u(self.t0 - k, v)
        h.set_u(t, 0.0)
        est = self.estimator()
        return control_input(est.theta0, h.phi(t), self.reference(t + d), n)

    def validate(self) -> None:
        if self.T <= self.t0:
            raise ConfigError(f"horizon T={self.T} must exceed t0={self.t0}")
        if not self.delta > 0:
            raise ConfigError(f"delta must be positive, got {self.delta!r}")
        try:
            plant = self.build_plant()
            plant.at(self.t0)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"invalid plant: {exc}") from None
        n, m, d = plant.n, plant.m, plant.d
        if self.box.dim != n + m + d or self.box.beta0_index != n:
            raise ConfigError(
                f"parameter box has dimension {self.box.dim} (beta_0 at {self.box.beta0_index}),"
                f" plant needs {n + m + d} (beta_0 at {n})"
            )
        cb = self.coefficient_box
        if cb is not None and (cb.n, cb.m, cb.d) != (n, m, d):
            raise ConfigError("coefficient box orders do not match the plant")
        if not self._midpoint and np.asarray(self.theta0).shape != (n + m + d,):
            raise ConfigError(f"theta0 needs {n + m + d} entries")
        if not self.x0.get("random"):
            ny, nu = n + d - 1, m + 2 * d - 1
            if len(self.x0.get("y", [0] * ny)) != ny or len(self.x0.get("u", [0] * nu)) != nu:
                raise ConfigError(f"x0 needs {ny} outputs and {nu} inputs")

    # --- serialisation ---------------------------------------------------
    def to_dict(self) -> dict:
        out = {
            "plant": self.plant,
            "box": {"lower": self.box.lower.tolist(), "upper": self.box.upper.tolist()},
            "estimator": {
                "delta": _delta_out(self.delta),
                "theta0": "midpoint" if self._midpoint else list(map(float, self.theta0)),
                "min_phi_norm": self.min_phi_norm,
            },
            "reference": self.reference.spec(),
            "disturbance": self.disturbance.spec(),
            "x0": self.x0,
            "t0": self.t0,
            "T": self.T,
            "seed": self.seed,
        }
        if self.coefficient_box is not None:
            out["coefficient_box"] = coefficient_box_to_dict(self.coefficient_box)
        return json.loads(json.dumps(out))

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentConfig":
        try:
            plant = dict(d["plant"])
        except KeyError:
            raise ConfigError("config needs a 'plant' entry") from None
        try:
            cb = coefficient_box_from_dict(d["coefficient_box"]) if "coefficient_box" in d else None
            if "box" in d:
                n = len(plant.get("a", plant.get("table", [{}])[0].get("a", [])))
                box = ParameterBox(d["box"]["lower"], d["box"]["upper"], beta0_index=n)
            elif cb is not None:
                box = predictor_box(cb)
            else:
                raise ConfigError("config needs a 'box' or a 'coefficient_box'")
            est = d.get("estimator", {})
            return cls(
                plant=plant,
                box=box,
                reference=Signal.from_spec(d.get("reference")),
                disturbance=Signal.from_spec(d.get("disturbance")),
                delta=_delta_in(est.get("delta", "inf")),
                theta0=est.get("theta0", "midpoint"),
                min_phi_norm=float(est.get("min_phi_norm", 0.0)),
                x0=dict(d.get("x0", {"random": True, "norm": 1.0})),
                t0=int(d.get("t0", 0)),
                T=int(d.get("T", 300)),
                seed=int(d.get("seed", 0)),
                coefficient_box=cb,
            )
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise ConfigError(f"invalid config: {exc}") from None

    def __eq__(self, other):
        if not isinstance(other, ExperimentConfig):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def with_overrides(self, **kw) -> "ExperimentConfig":
        d = self.to_dict()
        for k, v in kw.items():
            if v is not None:
                d[k] = v
        return ExperimentConfig.from_dict(d)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return ExperimentConfig.from_dict(data)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")


def run_config(cfg: ExperimentConfig) -> SimulationTrace:
    plant = cfg.build_plant()
    x0 = cfg.initial_condition(plant)
    return closed_loop_run(plant, cfg.estimator(), cfg.reference, cfg.disturbance, x0,
                           cfg.t0, cfg.T)


# --- CSV traces ----------------------------------------------------------

_BASE = ["t", "y", "u", "ystar", "w", "wbar", "e", "eps", "rho", "nu", "V"]


def trace_columns(dim: int) -> list[str]:
    return _BASE + [f"thetahat_{i}" for i in range(dim)]


def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_trace_csv(trace: SimulationTrace, path) -> None:
    """One row per ``t = t0 .. T``; ``theta_hat`` and ``V`` are the values
    after the update at ``t``."""
    dim = trace.theta_hat.shape[1]
    ts = trace.history.t_start
    sl = slice(trace.t0 - ts, trace.T - ts + 1)
    cols = [
        trace.y, trace.u, trace.ystar, trace.w[sl], trace.wbar[sl], trace.e, trace.eps,
        trace.rho, trace.nu, trace.V[1:],
    ] + [trace.theta_hat[1:, i] for i in range(dim)]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(trace_columns(dim))
        for k, t in enumerate(trace.times):
            wr.writerow([str(int(t))] + [_fmt(c[k]) for c in cols])


def read_trace_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        try:
            header = next(rd)
        except StopIteration:
            raise ValueError(f"{path}: empty trace file") from None
        if header[: len(_BASE)] != _BASE or not all(
            h == f"thetahat_{i}" for i, h in enumerate(header[len(_BASE):])
        ):
            raise ValueError(f"{path}: unexpected trace header {header}")
        rows = [r for r in rd if r]
    if not rows:
        raise ValueError(f"{path}: trace has no rows")
    try:
        data = np.array([[float(x) for x in r] for r in rows])
    except ValueError as exc:
        raise ValueError(f"{path}: malformed value ({exc})") from None
    if data.shape[1] != len(header):
        raise ValueError(f"{path}: ragged rows")
    out = {h: data[:, i] for i, h in enumerate(header)}
    t = out["t"]
    if np.any(np.diff(t) != 1):
        raise ValueError(f"{path}: time column must increase by one per row")
    return out


def trace_from_csv(cols: Mapping[str, np.ndarray], cfg: ExperimentConfig) -> SimulationTrace:
    """Rebuild a trace from CSV columns and the config that produced it."""
    plant = cfg.build_plant()
    t0, T = int(cols["t"][0]), int(cols["t"][-1])
    if t0 != cfg.t0:
        raise ValueError(f"trace starts at t={t0}, config says t0={cfg.t0}")
    dim = plant.n + plant.m + plant.d
    th_cols = [f"thetahat_{i}" for i in range(dim)]
    if any(c not in cols for c in th_cols):
        raise ValueError(f"trace needs {dim} estimate columns")
    theta = np.column_stack([cols[c] for c in th_cols])
    x0 = cfg.initial_condition(plant)
    return rebuild_trace(plant, cfg.estimator(), cfg.reference, cfg.disturbance, x0, t0, T,
                         cols["y"], cols["u"], cols["e"], cols["rho"], cols["nu"], theta)
