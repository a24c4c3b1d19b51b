"""Epistemic uncertainty for small neural classifiers: delta method vs. bootstrap."""
from .bootstrap import boot_mean, boot_sigma, make_resamples, train_ensemble
from .compare import RegressionResult, SweepSummary, UncertaintyTable, build_table, ols, sweep_B, sweep_K
from .delta import EigenPairs, LowRankPredictor, OpgOperator, UncertaintyVector, lanczos_topk, sigma_delta, sigma_delta_exact
from .netcore import (
    Dataset,
    NetworkSpec,
    ParamVector,
    cost,
    forward,
    grad_cost,
    per_example_grad,
    per_example_grads,
    predict,
    sensitivities,
    sensitivity,
)
from .trainer import DRWI, SRWI, SeedPolicy, TrainConfig, TrainingStats, adam_step, init_params, train

__version__ = "0.1.0"

__all__ = [
    "boot_mean", "boot_sigma", "make_resamples", "train_ensemble",
    "RegressionResult", "SweepSummary", "UncertaintyTable", "build_table", "ols", "sweep_B", "sweep_K",
    "EigenPairs", "LowRankPredictor", "OpgOperator", "UncertaintyVector", "lanczos_topk", "sigma_delta",
    "sigma_delta_exact",
    "Dataset", "NetworkSpec", "ParamVector", "cost", "forward", "grad_cost", "per_example_grad",
    "per_example_grads", "predict", "sensitivities", "sensitivity",
    "DRWI", "SRWI", "SeedPolicy", "TrainConfig", "TrainingStats", "adam_step", "init_params", "train",
]
