"""Minimal reverse-mode autodiff with the layers the forecasting models need."""

from .checkpoint import Checkpoint, CheckpointError
from .gradcheck import grad_check, relative_error
from .layers import (
    LstmLayerSpec,
    TcnSpec,
    causal_conv1d,
    dense,
    dropout,
    lstm_forward,
    merge,
    mse_loss,
    tcn_forward,
)
from .optim import Adam, MissingGradientError, Parameter, adam_step
from .tensor import Tensor

__all__ = [
    "Adam",
    "Checkpoint",
    "CheckpointError",
    "LstmLayerSpec",
    "MissingGradientError",
    "Parameter",
    "TcnSpec",
    "Tensor",
    "adam_step",
    "causal_conv1d",
    "dense",
    "dropout",
    "grad_check",
    "lstm_forward",
    "merge",
    "mse_loss",
    "relative_error",
    "tcn_forward",
]
