"""Minimal reverse-mode differentiable tensor engine."""

from .core import Node, Tape, Tensor, no_grad
from .gradcheck import gradient_check, relative_error
from .ops import (
    BatchNormState,
    ShapeError,
    batch_norm2d,
    center_crop,
    concat_crop,
    conv2d,
    max_pool2d,
    relu,
    softmax,
    softmax_cross_entropy,
    transposed_conv2d,
    weighted_sum,
)
from .optim import Adam, MissingGradientError, Parameter, adam_step

__all__ = [
    "Adam",
    "BatchNormState",
    "MissingGradientError",
    "Node",
    "Parameter",
    "ShapeError",
    "Tape",
    "Tensor",
    "adam_step",
    "batch_norm2d",
    "center_crop",
    "concat_crop",
    "conv2d",
    "gradient_check",
    "max_pool2d",
    "no_grad",
    "relative_error",
    "relu",
    "softmax",
    "softmax_cross_entropy",
    "transposed_conv2d",
    "weighted_sum",
]
