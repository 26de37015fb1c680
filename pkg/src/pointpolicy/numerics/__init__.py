"""Minimal dense-tensor autodiff: exactly the ops the policy model needs."""

from .checkpoint import CheckpointError, load_weights, save_weights
from .gradcheck import grad_check, jacobian
from .tensor import (
    DimensionError,
    Tensor,
    add,
    affine,
    attention,
    attention_weights,
    concat,
    embedding,
    gelu,
    layer_norm,
    matmul,
    mean,
    mse,
    mul,
    parameter,
    reshape,
    silu,
    square,
    sum_,
    swapaxes,
    take,
    topo_order,
    zero_graph_grads,
)

__all__ = [
    "CheckpointError",
    "DimensionError",
    "Tensor",
    "add",
    "affine",
    "attention",
    "attention_weights",
    "concat",
    "embedding",
    "gelu",
    "grad_check",
    "jacobian",
    "layer_norm",
    "load_weights",
    "matmul",
    "mean",
    "mse",
    "mul",
    "parameter",
    "reshape",
    "save_weights",
    "silu",
    "square",
    "sum_",
    "swapaxes",
    "take",
    "topo_order",
    "zero_graph_grads",
]
