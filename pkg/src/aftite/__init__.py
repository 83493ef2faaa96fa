"""Parametric AFT survival models with individualized treatment effects."""

__version__ = "0.1.0"

from .aft import FitOptions, FittedModel, ModelParams, fit, fit_design, information_criteria, loglik
from .design import ModelSpec, build_design, preset_spec
from .diagnostics import aft_residuals, qq_points, residual_overlay
from .errors import (AftiteError, BootstrapFailureError, DataError, NumericalError, RankDeficientError,
                     SchemaError)
from .ingest import AnalysisDataset, PreprocessOptions, TrialSchema, load_prostate, load_trial_csv, preprocess
from .ite import Profile, grid_profiles, ite_delta_ci, ite_grid, ite_point, reference_values
from .nonparam import km_estimate, logrank_test
from .resample import BootstrapPlan, bootstrap_ite
from .simlab import TrueParams, coverage_study, default_truth, simulate_trial

__all__ = [
    "__version__",
    "AftiteError", "BootstrapFailureError", "DataError", "NumericalError", "RankDeficientError", "SchemaError",
    "TrialSchema", "PreprocessOptions", "AnalysisDataset", "load_trial_csv", "preprocess", "load_prostate",
    "ModelSpec", "preset_spec", "build_design",
    "ModelParams", "FitOptions", "FittedModel", "fit", "fit_design", "loglik", "information_criteria",
    "km_estimate", "logrank_test",
    "Profile", "ite_point", "ite_delta_ci", "ite_grid", "grid_profiles", "reference_values",
    "BootstrapPlan", "bootstrap_ite",
    "aft_residuals", "residual_overlay", "qq_points",
    "TrueParams", "default_truth", "simulate_trial", "coverage_study",
]
