"""Minimal reverse-mode autodiff over numpy arrays."""

from desnet.autodiff.tensor import (
    Tensor, add, as_tensor, complex_abs, concat, div, exp, expand_dims, getitem, leaky_relu,
    linear, log, matmul, maximum, mean, mul, multiply, neg, pad, power, reshape, sigmoid,
    slice_, softmax, softplus, sqrt, stack, sub, sum_, tanh, transpose,
)
from desnet.autodiff.functional import (
    batchnorm2d, complex_concat, complex_mask, complex_mul, conv2d, deconv2d, lstm, lstm_cell,
    overlap_add,
)
from desnet.autodiff.nn import BatchNorm2d, Conv2d, Linear, LSTM, Module, ParameterSet
from desnet.autodiff.optim import Adam, adam_step, clip_grad_norm, global_grad_norm

__all__ = [
    "Tensor", "add", "as_tensor", "complex_abs", "concat", "div", "exp", "expand_dims", "getitem",
    "leaky_relu", "linear", "log", "matmul", "maximum", "mean", "mul", "multiply", "neg", "pad",
    "power", "reshape", "sigmoid", "slice_", "softmax", "softplus", "sqrt", "stack", "sub", "sum_",
    "tanh", "transpose", "batchnorm2d", "complex_concat", "complex_mask", "complex_mul", "conv2d",
    "deconv2d", "lstm", "lstm_cell", "overlap_add", "BatchNorm2d", "Conv2d", "Linear", "LSTM",
    "Module", "ParameterSet", "Adam", "adam_step", "clip_grad_norm", "global_grad_norm",
]
