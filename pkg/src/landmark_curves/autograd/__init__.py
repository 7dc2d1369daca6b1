"""Minimal reverse-mode autodiff over float64 numpy arrays."""
from .gradcheck import GradCheckReport, grad_check
from .nn import MLP, Conv2d, LayerNorm, Linear, Module
from .optim import AdamW
from .tensor import (
    NumericError,
    ShapeError,
    Tensor,
    as_tensor,
    backward,
    bilinear_sample,
    bilinear_sample_batched,
    no_grad,
    parameter,
    positional_encoding,
)

__all__ = [
    "AdamW", "Conv2d", "GradCheckReport", "LayerNorm", "Linear", "MLP", "Module",
    "NumericError", "ShapeError", "Tensor", "as_tensor", "backward", "bilinear_sample",
    "bilinear_sample_batched", "grad_check", "no_grad", "parameter", "positional_encoding",
]
