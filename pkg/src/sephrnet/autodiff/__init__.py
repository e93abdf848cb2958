"""Minimal dense-tensor engine with reverse-mode differentiation."""

from .conv import (
    avg_pool2d,
    conv2d,
    conv_output_size,
    conv_transpose2d,
    conv_transpose_output_size,
    separable_conv2d,
    upsample_nearest2d,
)
from .gradcheck import grad_check
from .norm import RunningStats, batch_norm, cross_entropy
from .serialization import read_labels, read_tensor, write_labels, write_tensor
from .tensor import (
    Tensor,
    add,
    affine,
    as_tensor,
    concat,
    exp,
    get_default_dtype,
    getitem,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    power,
    relu,
    reshape,
    set_default_dtype,
    sigmoid,
    softmax,
    stack,
    sum_,
    tanh,
    transpose,
)

__all__ = [
    "Tensor", "RunningStats", "add", "affine", "as_tensor", "avg_pool2d", "batch_norm", "concat",
    "conv2d", "conv_output_size", "conv_transpose2d", "conv_transpose_output_size", "cross_entropy",
    "exp", "get_default_dtype", "getitem", "grad_check", "log", "log_softmax", "matmul", "mean", "mul",
    "neg", "no_grad", "power", "read_labels", "read_tensor", "relu", "reshape", "separable_conv2d",
    "set_default_dtype", "sigmoid", "softmax", "stack", "sum_", "tanh", "transpose",
    "upsample_nearest2d", "write_labels", "write_tensor",
]
