from .checkpoint import load_archive, save_archive
from .layers import (
    LSTM,
    BatchNorm,
    CausalPad,
    Conv1d,
    ConvStage,
    Dense,
    Dropout,
    Layer,
    MaxPool1d,
    Parameter,
    ReLU,
    he_uniform,
    log_softmax,
    softmax,
)
from .optim import Adam

__all__ = [
    "Adam",
    "BatchNorm",
    "CausalPad",
    "Conv1d",
    "ConvStage",
    "Dense",
    "Dropout",
    "LSTM",
    "Layer",
    "MaxPool1d",
    "Parameter",
    "ReLU",
    "he_uniform",
    "load_archive",
    "log_softmax",
    "save_archive",
    "softmax",
]
