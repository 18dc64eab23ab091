"""Minimal float64 tensor engine with reverse-mode automatic differentiation."""

from . import ops
from .gradcheck import check_grad, grad_rel_error, numerical_grad
from .ops import (
    abs, add, concat, conv3d, div, exp, expand, getitem, gumbel_softmax, layer_norm, log,
    matmul, mean, mul, neg, pad, permute, power, relu, reshape, sigmoid, softmax, sqrt,
    square, stack, sub, sum, tanh, transpose, upsample_nearest, where_const,
)
from .sampling import identity_grid, sample_points, trilinear_sample, warp
from .tensor import Tape, TapeError, Tensor, as_tensor, backward, current_tape, no_grad

__all__ = [
    "Tensor", "Tape", "TapeError", "backward", "no_grad", "current_tape", "as_tensor",
    "ops", "check_grad", "grad_rel_error", "numerical_grad",
    "abs", "add", "concat", "conv3d", "div", "exp", "expand", "getitem", "gumbel_softmax",
    "layer_norm", "log", "matmul", "mean", "mul", "neg", "pad", "permute", "power", "relu",
    "reshape", "sigmoid", "softmax", "sqrt", "square", "stack", "sub", "sum", "tanh",
    "transpose", "upsample_nearest", "where_const",
    "identity_grid", "sample_points", "trilinear_sample", "warp",
]
