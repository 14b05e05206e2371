"""Minimal reverse-mode automatic differentiation over dense numpy tensors."""

from .functions import (
    Function,
    PaddingMode,
    absolute,
    activation,
    add,
    affine,
    avg_pool2x2,
    channel_reduce,
    concat,
    conv2d,
    elementwise,
    global_avg_pool,
    mean,
    mul,
    power,
    relu,
    reshape,
    rot90,
    sigmoid,
    tensor_sum,
)
from .gradcheck import GradientCheckReport, LeafCheck, gradient_check
from .tensor import DEFAULT_DTYPE, Graph, Tensor, as_tensor, backward, current_graph, tensor_new

__all__ = [
    "DEFAULT_DTYPE",
    "Function",
    "GradientCheckReport",
    "Graph",
    "LeafCheck",
    "PaddingMode",
    "Tensor",
    "absolute",
    "activation",
    "add",
    "affine",
    "as_tensor",
    "avg_pool2x2",
    "backward",
    "channel_reduce",
    "concat",
    "conv2d",
    "current_graph",
    "elementwise",
    "global_avg_pool",
    "gradient_check",
    "mean",
    "mul",
    "power",
    "relu",
    "reshape",
    "rot90",
    "sigmoid",
    "tensor_new",
    "tensor_sum",
]
