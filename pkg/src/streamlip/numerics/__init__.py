"""Minimal tensor library: autodiff core, neural primitives, Adam, RNG, gradient checks."""

from .functional import (
    conv3d,
    embedding,
    global_norm_clip,
    layer_norm,
    linear,
    log_softmax,
    logsumexp,
    masked_softmax,
    max_over,
    max_pool3d,
    mean_over,
    relu,
    scaled_dot_attention,
    softmax,
)
from .gradcheck import grad_check, numerical_gradient
from .optim import Adam
from .rng import make_rng
from .tensor import (
    Tensor,
    concatenate,
    get_dtype,
    grad_enabled,
    matmul,
    no_grad,
    ones,
    precision,
    set_precision,
    stack,
    take_along_axis,
    tensor,
    where,
    zeros,
)

__all__ = [
    "Adam",
    "Tensor",
    "concatenate",
    "conv3d",
    "embedding",
    "get_dtype",
    "global_norm_clip",
    "grad_check",
    "grad_enabled",
    "layer_norm",
    "linear",
    "log_softmax",
    "logsumexp",
    "make_rng",
    "masked_softmax",
    "matmul",
    "max_over",
    "max_pool3d",
    "mean_over",
    "no_grad",
    "numerical_gradient",
    "ones",
    "precision",
    "relu",
    "scaled_dot_attention",
    "set_precision",
    "softmax",
    "stack",
    "take_along_axis",
    "tensor",
    "where",
    "zeros",
]
