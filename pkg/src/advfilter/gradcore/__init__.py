"""Small reverse-mode autodiff engine on top of numpy (float64 only)."""
from advfilter.gradcore.ops import (
    add,
    avg_pool,
    conv2d,
    elu,
    flatten,
    log,
    matmul,
    mean,
    mse,
    mul,
    relu,
    reshape,
    scale,
    softmax,
    softmax_cross_entropy,
    square,
    sub,
    sum,
    transpose,
)
from advfilter.gradcore.optim import Adam
from advfilter.gradcore.tensor import Tensor, as_tensor, backward, zero_grad

__all__ = [
    "Adam",
    "Tensor",
    "add",
    "as_tensor",
    "avg_pool",
    "backward",
    "conv2d",
    "elu",
    "flatten",
    "log",
    "matmul",
    "mean",
    "mse",
    "mul",
    "relu",
    "reshape",
    "scale",
    "softmax",
    "softmax_cross_entropy",
    "square",
    "sub",
    "sum",
    "transpose",
    "zero_grad",
]
