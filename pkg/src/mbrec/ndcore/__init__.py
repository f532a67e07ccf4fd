"""Dense arrays with reverse-mode gradients, Adam, and checkpoint IO."""
from .autodiff import (
    ContractError,
    DimensionError,
    Tape,
    Tensor,
    add,
    backward,
    concat,
    current_tape,
    einsum,
    l2_normalize,
    matmul,
    mul,
    relu,
    reshape,
    softmax,
    spmm,
    stack,
    sub,
    sum,
    sumsq,
    take,
    transpose,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .optim import Adam, AdamState, adam_step

__all__ = [
    "Adam", "AdamState", "CheckpointError", "ContractError", "DimensionError",
    "Tape", "Tensor", "adam_step", "add", "backward", "concat", "current_tape",
    "einsum", "l2_normalize", "load_checkpoint", "matmul", "mul", "relu",
    "reshape", "save_checkpoint", "softmax", "spmm", "stack", "sub", "sum",
    "sumsq", "take", "transpose",
]
