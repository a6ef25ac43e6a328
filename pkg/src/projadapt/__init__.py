"""Adaptive d-step-ahead control with the ideal projection estimator."""

from .analysis import (
    BoundFit,
    build_crude_model,
    build_extended_system,
    build_good_model,
    decompose_prop3,
    drift_budget,
    fit_convolution_bound,
    l2_tracking_check,
    transition_decay,
)
from .controller import Signal, SimulationTrace, closed_loop_run, control_input
from .estimator import EstimatorConfig, estimator_update, verify_prop1
from .io import ExperimentConfig, load_config, read_trace_csv, save_config, write_trace_csv
from .model import (
    CoefficientBox,
    InitialCondition,
    ParameterBox,
    PlantParameters,
    PredictorParameters,
    TimeVaryingPlant,
    check_assumption1,
    predictor_box,
    to_predictor,
)
from .poly import Polynomial, long_division, zeros_in_z

__version__ = "0.1.0"
