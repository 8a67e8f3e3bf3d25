"""One-step balancing weights for generalizing and transporting treatment effects."""

__version__ = "0.1.0"

from .basis import BasisSpec, expand, standardized_tolerances
from .data import StudyDataset, TargetProfile, impute_missing, load_dataset, profile_from_sample
from .estimate import bootstrap_ci, ess, hajek, max_normalized_weight, tasmd
from .propensity import fit_logistic, two_step_weights
from .solver import BalanceProblem, SolverSettings, WeightSolution, solve_weights
from .tune import TuningGrid, tune_tolerance

__all__ = [
    "BalanceProblem", "BasisSpec", "SolverSettings", "StudyDataset", "TargetProfile",
    "TuningGrid", "WeightSolution", "bootstrap_ci", "ess", "expand", "fit_logistic",
    "hajek", "impute_missing", "load_dataset", "max_normalized_weight",
    "profile_from_sample", "solve_weights", "standardized_tolerances", "tasmd",
    "tune_tolerance", "two_step_weights",
]
