"""Chi-divergence variational inference (CHIVI) with ELBO/CUBO sandwich estimates."""

__version__ = "0.1.0"

from .kernels import BACKEND
from .model import (
    CoxGrid,
    Dataset,
    KernelParams,
    load_csv_dataset,
    load_shot_csv,
    log_joint,
    make_conjugate_gaussian,
    make_cox_process,
    make_gp_classification,
    make_probit,
)
from .variational import VariationalParams, init_params
from .bounds import compute_log_weights, cubo_estimate, elbo_estimate, f_divergence_taylor
from .gradients import elbo_reparam_grad, reparam_grad, score_grad
from .optimize import OptimizerConfig, Schedule, chivi_fit, chivi_fit_full, klvi_fit, sandwich_run

__all__ = [
    "BACKEND",
    "CoxGrid",
    "Dataset",
    "KernelParams",
    "OptimizerConfig",
    "Schedule",
    "VariationalParams",
    "chivi_fit",
    "chivi_fit_full",
    "compute_log_weights",
    "cubo_estimate",
    "elbo_estimate",
    "elbo_reparam_grad",
    "f_divergence_taylor",
    "init_params",
    "klvi_fit",
    "load_csv_dataset",
    "load_shot_csv",
    "log_joint",
    "make_conjugate_gaussian",
    "make_cox_process",
    "make_gp_classification",
    "make_probit",
    "reparam_grad",
    "sandwich_run",
    "score_grad",
]
