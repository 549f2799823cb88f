"""Device sizing: parameter spaces, bias search, TPE and the sizing loop."""

from .bias import DEFAULT_STAGES, DEFAULT_WINDOW, BiasResult, SimFail, circuit_sweep, multires_bias_search
from .objective import ObjectiveSpec, evaluate_objective, figure_of_merit, gain_db, objective_value
from .optimize import AllTrialsFailed, BiasFail, OptimizeResult, circuit_evaluator, optimize, running_best
from .params import (
    WL_RULE,
    ConstraintViolation,
    EmptySpace,
    ExtractionFailed,
    ParamRange,
    ParamSpace,
    ParamSpaceError,
    parse_extraction_response,
    validate_param_space,
)
from .tpe import TrialRecord, tpe_suggest

__all__ = [
    "DEFAULT_STAGES", "DEFAULT_WINDOW", "BiasResult", "SimFail", "circuit_sweep", "multires_bias_search",
    "ObjectiveSpec", "evaluate_objective", "figure_of_merit", "gain_db", "objective_value",
    "AllTrialsFailed", "BiasFail", "OptimizeResult", "circuit_evaluator", "optimize", "running_best",
    "WL_RULE", "ConstraintViolation", "EmptySpace", "ExtractionFailed", "ParamRange", "ParamSpace",
    "parse_extraction_response", "validate_param_space", "TrialRecord", "tpe_suggest",
]
