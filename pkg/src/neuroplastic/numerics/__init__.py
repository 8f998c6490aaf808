from .adam import Adam, AdamConfig, AdamState, adam_step
from .gradcheck import GradCheckReport, grad_check
from .ops import (
    BatchNorm,
    DegenerateBatchError,
    ShapeError,
    add,
    affine,
    batchnorm,
    concat_cols,
    cross_entropy,
    logit,
    mul,
    relu,
    sigmoid,
    sigmoid_t,
    softmax_cross_entropy,
    softmax_rows,
    sub,
    total,
)
from .tensor import Parameter, Tensor, backward, no_grad, zero_grads

__all__ = [
    "Adam", "AdamConfig", "AdamState", "adam_step",
    "GradCheckReport", "grad_check",
    "BatchNorm", "DegenerateBatchError", "ShapeError",
    "add", "affine", "batchnorm", "concat_cols", "cross_entropy", "logit", "mul",
    "relu", "sigmoid", "sigmoid_t", "softmax_cross_entropy", "softmax_rows", "sub", "total",
    "Parameter", "Tensor", "backward", "no_grad", "zero_grads",
]
