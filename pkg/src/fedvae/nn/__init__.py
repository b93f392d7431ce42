"""Minimal reverse-mode autodiff, layers, losses and optimizer."""

from .checkpoint import load_params, read_arrays, save_params, write_arrays
from .losses import cross_entropy, kl_diag_gaussian, mse_masked
from .optim import AdamState, StepSchedule, adam_step, clip_grad_norm
from .params import ParamSet
from .recurrent import GruParams, gru_sequence, gru_step
from .rng import derive_seed, standard_normal, stream
from .tensor import (Tensor, add, concat, cos, cumsum, exp, linear, log, matmul, mean,
                     mul, neg, no_grad, relu, reshape, sigmoid, sin, slice_, softmax, square,
                     stack, sub, sum_, tanh, tensor)


def reparameterize(mu, logvar, rng):
    """``z = mu + exp(logvar / 2) * eps`` with ``eps`` drawn from ``rng``.

    ``eps`` is a constant of the graph, so gradients reach ``mu`` and ``logvar`` only.
    """
    eps = Tensor(standard_normal(rng, tuple(mu.shape)))
    return add(mu, mul(exp(mul(logvar, 0.5)), eps))


__all__ = [
    "Tensor", "tensor", "ParamSet", "AdamState", "StepSchedule", "GruParams",
    "add", "sub", "mul", "neg", "matmul", "linear", "tanh", "sin", "cos", "sigmoid", "relu",
    "exp", "log", "softmax", "concat", "stack", "slice_", "sum_", "mean",
    "reshape", "cumsum", "square", "no_grad", "gru_step", "gru_sequence",
    "mse_masked", "cross_entropy", "kl_diag_gaussian",
    "adam_step", "clip_grad_norm", "reparameterize",
    "stream", "derive_seed", "standard_normal",
    "write_arrays", "read_arrays", "save_params", "load_params",
]
