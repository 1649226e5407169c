"""Differentiable numerical substrate: tensors, layer ops, Adam, gradient checks."""

from .gradcheck import GradCheckReport, finite_diff_check
from .kernels import BACKEND
from .ops import (
    RunningStats,
    batch_norm,
    conv2d_s2,
    conv_transpose2d_s2,
    dense,
    identity_act,
    leaky_relu,
    pairwise_diff,
    sigmoid_act,
    tanh_act,
)
from .optim import AdamState, adam_step
from .tensor import ShapeError, Tensor, backward, concat, flatten

__all__ = [
    "AdamState",
    "BACKEND",
    "GradCheckReport",
    "RunningStats",
    "ShapeError",
    "Tensor",
    "adam_step",
    "backward",
    "batch_norm",
    "concat",
    "conv2d_s2",
    "conv_transpose2d_s2",
    "dense",
    "finite_diff_check",
    "flatten",
    "identity_act",
    "leaky_relu",
    "pairwise_diff",
    "sigmoid_act",
    "tanh_act",
]
