"""Reverse-mode autodiff engine: tensors, pointwise ops, convolutions."""

from .functional import (GRUParams, avg_pool2d, conv2d, conv3d, gap,
                         gru_cell_step, linear, resample2d)
from .tensor import (Graph, GridTensor, absval, add, backward, broadcast_to,
                     concat, grad_enabled, make_node, mean, mean_all, mul,
                     narrow, no_grad, relu, reshape, rsqrt_eps, sigmoid,
                     square, sqrt_eps, stack, sub, sum_all, tanh, zero_grads)

__all__ = [
    "Graph", "GridTensor", "GRUParams",
    "absval", "add", "avg_pool2d", "backward", "broadcast_to", "concat",
    "conv2d", "conv3d", "gap", "grad_enabled", "gru_cell_step", "linear",
    "make_node", "mean", "mean_all", "mul", "narrow", "no_grad", "relu",
    "resample2d", "reshape", "rsqrt_eps", "sigmoid", "square", "sqrt_eps",
    "stack", "sub", "sum_all", "tanh", "zero_grads",
]
