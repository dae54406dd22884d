"""Minimal dense-tensor engine with reverse-mode differentiation."""

from . import ops
from .gradcheck import GradCheckReport, grad_check, numerical_gradient, relative_error
from .nn import BatchNorm2d, Conv2d, Module
from .ops import ShapeError
from .tensor import GraphError, Parameter, Tensor, no_grad

__all__ = [
    "BatchNorm2d",
    "Conv2d",
    "GradCheckReport",
    "GraphError",
    "Module",
    "Parameter",
    "ShapeError",
    "Tensor",
    "grad_check",
    "no_grad",
    "numerical_gradient",
    "ops",
    "relative_error",
]
