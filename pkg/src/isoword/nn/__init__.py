from .functional import (
    cross_entropy,
    dropout,
    one_hot,
    relu,
    relu_backward,
    sigmoid,
    softmax,
    softmax_cross_entropy,
)
from .layers import (
    BLSTM,
    LSTM,
    ChannelsLast,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    GlobalAvgPool,
    Layer,
    MaxPool2D,
    ReLU,
    Standardize,
    ToSequence,
)
from .optim import Adam

__all__ = [
    "Adam", "BLSTM", "ChannelsLast", "Conv2D", "Dense", "Dropout", "Flatten", "GlobalAvgPool", "LSTM",
    "Layer", "MaxPool2D", "ReLU", "Standardize", "ToSequence", "cross_entropy", "dropout", "one_hot",
    "relu", "relu_backward", "sigmoid", "softmax", "softmax_cross_entropy",
]
