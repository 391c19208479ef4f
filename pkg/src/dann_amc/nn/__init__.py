from .layers import (BatchNorm, Dropout, GeLU, GradReversal, LayerStack, Linear, Param, ReLU,
                     StackCache)
from .losses import log_softmax, softmax_cross_entropy
from .optim import Adam

__all__ = [
    "Adam", "BatchNorm", "Dropout", "GeLU", "GradReversal", "LayerStack", "Linear", "Param",
    "ReLU", "StackCache", "log_softmax", "softmax_cross_entropy",
]
