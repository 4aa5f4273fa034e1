"""Small numpy tensor core with reverse-mode differentiation."""
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .layers import LSTM, AvgPool2d, Conv2d, Linear, LSTMCell, Module, lstm_cell
from .optim import Adam, adam_step, restore, snapshot
from .tensor import (
    BCE_EPS,
    NonFiniteError,
    OddExtent,
    Parameter,
    ShapeMismatch,
    Tape,
    Tensor,
    avgpool2d,
    bce_loss,
    concat,
    conv2d,
    dropout,
    linear,
    relu,
    sigmoid,
    tanh,
)

__all__ = [
    "Adam",
    "AvgPool2d",
    "BCE_EPS",
    "CheckpointError",
    "Conv2d",
    "LSTM",
    "LSTMCell",
    "Linear",
    "Module",
    "NonFiniteError",
    "OddExtent",
    "Parameter",
    "ShapeMismatch",
    "Tape",
    "Tensor",
    "adam_step",
    "avgpool2d",
    "bce_loss",
    "concat",
    "conv2d",
    "dropout",
    "linear",
    "load_checkpoint",
    "lstm_cell",
    "relu",
    "restore",
    "save_checkpoint",
    "sigmoid",
    "snapshot",
    "tanh",
]
