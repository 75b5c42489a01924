"""Reverse-mode automatic differentiation over float64 numpy arrays."""

from . import ops
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, directional_grad_check, grad_check
from .optim import AdamW, as_params
from .tensor import Tape, Tensor, as_tensor, backward, get_tape, no_grad

__all__ = [
    "AdamW", "GradCheckReport", "Tape", "Tensor", "as_params", "as_tensor", "backward", "directional_grad_check",
    "get_tape", "grad_check", "load_checkpoint", "no_grad", "ops", "save_checkpoint",
]
