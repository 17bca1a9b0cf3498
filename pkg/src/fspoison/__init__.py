"""Gradient-based poisoning of embedded feature selection (LASSO, ridge, elastic net)."""

from .learners import (
    ConvergenceError,
    Dataset,
    Kind,
    LearnerConfig,
    LinearModel,
    Regularizer,
    classify,
    decision,
    kkt_residual,
    objective,
    select_lambda,
    train,
)

__all__ = [
    "ConvergenceError",
    "Dataset",
    "Kind",
    "LearnerConfig",
    "LinearModel",
    "Regularizer",
    "classify",
    "decision",
    "kkt_residual",
    "objective",
    "select_lambda",
    "train",
]
