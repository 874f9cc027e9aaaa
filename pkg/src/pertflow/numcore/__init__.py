"""Minimal deterministic float64 autodiff core used by every velocity field."""

from .checkpoint import load_arrays, save_arrays
from .gradcheck import grad_check
from .ops import (
    add, concat, conv1d, dropout, exp, group_norm, linear, matmul, mean, mse, mul,
    pad_axis, repeat, reshape, self_attention, sigmoid, silu, slice_axis, softmax,
    square, sub, transpose,
)
from .ops import sum as sum_  # noqa: F401
from .optim import AdamState, adam_step, clip_grad_norm
from .tensor import ParameterSet, Tape, Tensor, active_tape, as_tensor, make_node

__all__ = [
    "AdamState", "ParameterSet", "Tape", "Tensor", "active_tape", "adam_step", "add",
    "as_tensor", "clip_grad_norm", "concat", "conv1d", "dropout", "exp", "grad_check",
    "group_norm", "linear", "load_arrays", "make_node", "matmul", "mean", "mse", "mul",
    "pad_axis", "repeat", "reshape", "save_arrays", "self_attention", "sigmoid", "silu",
    "slice_axis", "softmax", "square", "sub", "sum_", "transpose",
]
