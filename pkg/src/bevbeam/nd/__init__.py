"""Numeric substrate: tensors, the gradient tape, and differentiable ops."""

from .tensor import Tensor, Tape, active_tape, parameter, tensor, zero_grads
from .fft import dft, fft_power
from . import init
from .ops import (
    BatchNormState,
    add,
    add_scalar,
    affine,
    batch_norm,
    bilinear_resize,
    concat,
    conv2d,
    dropout,
    gather_labels,
    gated_add,
    gelu,
    layer_norm,
    log,
    matmul,
    mul,
    neg,
    pow_const,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    scale,
    softmax,
    stack,
    sub,
    take_rows,
    tanh,
    transpose,
)

__all__ = [
    "Tensor", "Tape", "active_tape", "parameter", "tensor", "zero_grads",
    "dft", "fft_power", "init",
    "BatchNormState", "add", "add_scalar", "affine", "batch_norm",
    "bilinear_resize", "concat", "conv2d", "dropout", "gather_labels",
    "gated_add", "gelu", "layer_norm", "log", "matmul", "mul", "neg",
    "pow_const", "reduce_mean", "reduce_sum", "relu", "reshape", "scale",
    "softmax", "stack", "sub", "take_rows", "tanh", "transpose",
]
