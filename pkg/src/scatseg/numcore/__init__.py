"""Numeric core: tensors, reverse-mode autodiff, Adam, checkpoints."""
from .checkpoint import load_checkpoint, save_checkpoint
from .optim import Adam, AdamState, adam_step
from .tensor import (
    Tape,
    Tensor,
    add,
    add_bias,
    as_tensor,
    attention,
    backward,
    concat_cols,
    concat_rows,
    cross_entropy,
    elementwise,
    gather_rows,
    leaky_relu,
    matmul,
    mean_rows,
    mul,
    neighbor_max,
    normalize_rows,
    scale,
    slice_cols,
    slice_rows,
    softmax_rows,
    sum_all,
    transpose,
)

__all__ = [
    "Adam", "AdamState", "Tape", "Tensor", "adam_step", "add", "add_bias", "as_tensor",
    "attention", "backward", "concat_cols", "concat_rows", "cross_entropy", "elementwise",
    "gather_rows", "leaky_relu", "load_checkpoint", "matmul", "mean_rows", "mul",
    "neighbor_max", "normalize_rows", "save_checkpoint", "scale", "slice_cols", "slice_rows", "softmax_rows",
    "sum_all", "transpose",
]
