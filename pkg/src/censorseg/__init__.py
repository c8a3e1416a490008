"""Segmentation under false-negative label noise on synthetic lesion phantoms."""

from .censor import CensorPlan, apply_plan, censor_size_based, censor_stochastic
from .losses import LossSpec, compute_loss, lesion_prob_entropy
from .phantom import PhantomSpec, generate_case, generate_dataset
from .runner import ExperimentConfig, config_from_dict, load_config, run_experiment, run_size_sweep

__version__ = "0.1.0"

__all__ = [
    "CensorPlan",
    "ExperimentConfig",
    "LossSpec",
    "PhantomSpec",
    "apply_plan",
    "censor_size_based",
    "censor_stochastic",
    "compute_loss",
    "config_from_dict",
    "generate_case",
    "generate_dataset",
    "lesion_prob_entropy",
    "load_config",
    "run_experiment",
    "run_size_sweep",
]
