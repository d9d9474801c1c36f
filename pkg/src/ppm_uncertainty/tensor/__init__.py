"""Minimal float64 tensor library with tape-based reverse-mode autodiff."""

from .core import Tape, Tensor, active_tape, as_tensor
from .io import load_checkpoint, save_checkpoint
from .ops import (
    add,
    affine,
    concat,
    conv1d,
    div,
    dropout,
    elu,
    embedding_lookup,
    exp,
    index,
    log,
    log_softmax,
    logsumexp,
    matmul,
    mul,
    neg,
    power,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    sigmoid,
    softmax,
    square,
    sub,
    tanh,
    transpose,
)
from .optim import Adam, adam_step
from .rng import RngStream, dropout_mask

__all__ = [
    "Adam", "RngStream", "Tape", "Tensor", "active_tape", "adam_step", "add", "affine",
    "as_tensor", "concat", "conv1d", "div", "dropout", "dropout_mask", "elu",
    "embedding_lookup", "exp", "index", "load_checkpoint", "log", "log_softmax", "logsumexp",
    "matmul", "mul", "neg", "power", "reduce_mean", "reduce_sum", "relu", "reshape",
    "save_checkpoint", "sigmoid", "softmax", "square", "sub", "tanh", "transpose",
]
