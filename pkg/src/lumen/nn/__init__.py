"""Minimal numpy layer toolkit with analytic backpropagation."""

from .checkpoint import load_checkpoint, save_checkpoint, tensors_hash
from .gradcheck import GradCheckReport, grad_check
from .layers import (
    ELU,
    BatchNorm,
    Conv2d,
    Dense,
    Flatten,
    Layer,
    Reshape,
    ResidualBlock,
    Sequential,
    Upsample2x,
    UpsampleConv,
    iter_buffers,
    iter_params,
    param_count,
)
from .optim import Adam

__all__ = [
    "Adam",
    "BatchNorm",
    "Conv2d",
    "Dense",
    "ELU",
    "Flatten",
    "GradCheckReport",
    "Layer",
    "Reshape",
    "ResidualBlock",
    "Sequential",
    "Upsample2x",
    "UpsampleConv",
    "grad_check",
    "iter_buffers",
    "iter_params",
    "load_checkpoint",
    "param_count",
    "save_checkpoint",
    "tensors_hash",
]
