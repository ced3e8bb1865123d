"""Subgroup detection in scalar-on-function regression by penalized fusion.

Each subject's coefficient function is a cubic B-spline; pairwise MCP
penalties on coefficient differences fuse subjects into groups, fitted by
ADMM.
"""

__version__ = "0.1.0"

from .bspline import BSplineBasis, build_basis, cross_gram, eval_basis, eval_basis_d2, gram_d2
from .design import Dataset, Design, FunctionalSample, assemble, spherical_weights
from .errors import (
    DivergenceError,
    FunfuseError,
    InvalidArgumentError,
    SingularSystemError,
    TuningFailureError,
)
from .solver import FitResult, PenaltyConfig, admm_fit, fit_path, predict
from .tuning import TuneReport, gcv, modified_bic, two_step_tune
from .simgen import ScenarioSpec, TruthRecord, generate, l2_distance, scenario_coefficients
from .baselines import kmeans, oracle_fit, penalized_group_fit, resi_fit, resp_fit
from .metrics import adjusted_rand_index, coef_mse, nmi, prediction_mse

__all__ = [
    "BSplineBasis",
    "build_basis",
    "eval_basis",
    "eval_basis_d2",
    "gram_d2",
    "cross_gram",
    "FunctionalSample",
    "Dataset",
    "Design",
    "assemble",
    "spherical_weights",
    "PenaltyConfig",
    "FitResult",
    "admm_fit",
    "fit_path",
    "predict",
    "TuneReport",
    "modified_bic",
    "gcv",
    "two_step_tune",
    "ScenarioSpec",
    "TruthRecord",
    "generate",
    "l2_distance",
    "scenario_coefficients",
    "penalized_group_fit",
    "oracle_fit",
    "kmeans",
    "resp_fit",
    "resi_fit",
    "adjusted_rand_index",
    "nmi",
    "coef_mse",
    "prediction_mse",
    "FunfuseError",
    "InvalidArgumentError",
    "SingularSystemError",
    "DivergenceError",
    "TuningFailureError",
]
