"""Fusion + CNN-BiLSTM classifier with hand-written training."""

from .network import (
    EmptyUtterance,
    ModelConfig,
    ModelError,
    NonFiniteLoss,
    Sample,
    SOURCES,
    FusionParams,
    cross_entropy,
    forward,
    fuse,
    init_params,
    loss_and_grads,
    make_batch,
    softmax_alpha,
)
from .training import (
    EmptyDataset,
    GradCheckReport,
    GradientMismatch,
    TrainedModel,
    grad_check,
    predict,
    predict_probs,
    train,
)
from .checkpoint import config_fingerprint, load_checkpoint, save_checkpoint

__all__ = [
    "EmptyDataset",
    "EmptyUtterance",
    "FusionParams",
    "GradCheckReport",
    "GradientMismatch",
    "ModelConfig",
    "ModelError",
    "NonFiniteLoss",
    "SOURCES",
    "Sample",
    "TrainedModel",
    "config_fingerprint",
    "cross_entropy",
    "forward",
    "fuse",
    "grad_check",
    "init_params",
    "load_checkpoint",
    "loss_and_grads",
    "make_batch",
    "predict",
    "predict_probs",
    "save_checkpoint",
    "softmax_alpha",
    "train",
]
