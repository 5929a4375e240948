"""Joint-dependence models and evaluation suite for EV charging events."""

__version__ = "0.1.0"

from ._kernels import kendall_tau, using_numba
from .harness import ExperimentConfig, emit_report, fit_model, run_experiment, sample_model
from .metrics import MetricsReport, evaluate_all
from .sessions import Dataset, chronological_split, load_csv, pseudo_observations, read_preprocessed_csv

__all__ = [
    "__version__",
    "Dataset",
    "ExperimentConfig",
    "MetricsReport",
    "chronological_split",
    "emit_report",
    "evaluate_all",
    "fit_model",
    "kendall_tau",
    "load_csv",
    "pseudo_observations",
    "read_preprocessed_csv",
    "run_experiment",
    "sample_model",
    "using_numba",
]
