"""Graph-trajectory survival prognosis on a self-contained autodiff engine.

Pipeline: heterogeneous 7-node patient graphs -> time-conditioned residual
message passing -> LSTM trajectory integration -> cascaded discrete-time
DFS/OS survival heads, with censored-survival training, evaluation metrics,
and a repeated stratified cross-validation harness.
"""

from .autodiff import Tensor, backward, grad_check
from .cohort import (PatientRecord, Scenario, augment, load_cohort, oracle_cindex,
                     save_cohort, simulate_cohort, stratified_repeated_kfold)
from .config import RunConfig, config_from_dict, load_config
from .crossval import emit_report, run_ablation, run_crossval
from .graph import NodeKind, PatientGraph, build_patient_graph, validate_graph
from .heads import TimeBins, annual_bins
from .metrics import (bootstrap_ci, harrell_cindex, integrated_brier,
                      km_censoring_survival, mae_uncensored, time_dependent_auc)
from .model import FullModel, ModelConfig, init_model
from .objective import SurvivalLabel, discrete_nll, label_to_bin
from .training import TrainSettings, train_model

__version__ = "0.1.0"

__all__ = [
    "Tensor", "backward", "grad_check",
    "PatientRecord", "Scenario", "augment", "load_cohort", "oracle_cindex",
    "save_cohort", "simulate_cohort", "stratified_repeated_kfold",
    "RunConfig", "config_from_dict", "load_config",
    "emit_report", "run_ablation", "run_crossval",
    "NodeKind", "PatientGraph", "build_patient_graph", "validate_graph",
    "TimeBins", "annual_bins",
    "bootstrap_ci", "harrell_cindex", "integrated_brier", "km_censoring_survival",
    "mae_uncensored", "time_dependent_auc",
    "FullModel", "ModelConfig", "init_model",
    "SurvivalLabel", "discrete_nll", "label_to_bin",
    "TrainSettings", "train_model",
    "__version__",
]
