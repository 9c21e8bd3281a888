"""Desk-scale neural network core: layers, losses, optimizer, trainers."""

from .checkpoint import (
    CHECKPOINT_MAGIC,
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
)
from .layers import (
    Dropout,
    FeedForward,
    Linear,
    LstmLayer,
    LstmParams,
    MultiHeadAttention,
    OddWidthError,
    ShapeMismatchError,
    attention_forward,
    lstm_cell_step,
    positional_encoding,
)
from .losses import bce, loss, mse
from .models import (
    EmptyBatchError,
    GanLstmModel,
    LstmReconModel,
    ModelConfig,
    ModelKind,
    NonFiniteLossError,
    TrainedModel,
    TstModel,
    build_model,
    reconstruct_errors,
    train,
)
from .optim import Adam, OptimHyper, adam_step, clip_gradients

__all__ = [
    "CHECKPOINT_MAGIC",
    "CheckpointError",
    "Adam",
    "Dropout",
    "EmptyBatchError",
    "FeedForward",
    "GanLstmModel",
    "Linear",
    "LstmLayer",
    "LstmParams",
    "LstmReconModel",
    "ModelConfig",
    "ModelKind",
    "MultiHeadAttention",
    "NonFiniteLossError",
    "OddWidthError",
    "OptimHyper",
    "ShapeMismatchError",
    "TrainedModel",
    "TstModel",
    "adam_step",
    "attention_forward",
    "bce",
    "build_model",
    "clip_gradients",
    "load_checkpoint",
    "loss",
    "lstm_cell_step",
    "mse",
    "positional_encoding",
    "reconstruct_errors",
    "save_checkpoint",
    "train",
]
