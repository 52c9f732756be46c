"""Minimal float64 numerics with reverse-mode differentiation."""

from strap.numerics.gru import GruParams, gru_cell_forward, gru_sequence
from strap.numerics.optim import AdamWState, adamw_step, clip_gradients, global_norm
from strap.numerics.tensor import (
    Tensor,
    add,
    backward,
    concat,
    gather_rows,
    grad_enabled,
    linear,
    mae_loss,
    mean_aggregate,
    mul,
    no_grad,
    relu,
    reshape,
    segment_mean,
    sigmoid,
    spmm,
    sub,
    tanh,
    total,
)

linear_forward = linear

__all__ = [
    "AdamWState",
    "GruParams",
    "Tensor",
    "adamw_step",
    "add",
    "backward",
    "clip_gradients",
    "concat",
    "gather_rows",
    "global_norm",
    "grad_enabled",
    "gru_cell_forward",
    "gru_sequence",
    "linear",
    "linear_forward",
    "mae_loss",
    "mean_aggregate",
    "mul",
    "no_grad",
    "relu",
    "reshape",
    "segment_mean",
    "sigmoid",
    "spmm",
    "sub",
    "tanh",
    "total",
]
