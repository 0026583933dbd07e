"""Minimal reverse-mode autodiff over float64 numpy arrays."""
from .tensor import (AutodiffError, NonFiniteError, Tensor, as_tensor, backward, debug_checks,
                     enable_grad, grad, is_grad_enabled, no_grad, set_debug_checks)
from .ops import GeometryError, ShapeError
from .optim import AdamWState, adamw_step
from . import nn, ops

__all__ = [
    "AdamWState", "AutodiffError", "GeometryError", "NonFiniteError", "ShapeError", "Tensor",
    "adamw_step", "as_tensor", "backward", "debug_checks", "enable_grad", "grad",
    "is_grad_enabled", "nn", "no_grad", "ops", "set_debug_checks",
]
