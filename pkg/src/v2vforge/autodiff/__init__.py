from .checkpoint import load_tensors, save_tensors
from .gradcheck import check_gradients
from .optim import OptState, adamw_step
from .tensor import (
    PRIMITIVES,
    GradTape,
    Tensor,
    backward,
    concat,
    gelu,
    layer_norm,
    matmul,
    mse,
    reshape,
    sinusoidal,
    sinusoidal_table,
    softmax,
    transpose,
)

__all__ = [
    "PRIMITIVES",
    "GradTape",
    "OptState",
    "Tensor",
    "adamw_step",
    "backward",
    "check_gradients",
    "concat",
    "gelu",
    "layer_norm",
    "load_tensors",
    "matmul",
    "mse",
    "reshape",
    "save_tensors",
    "sinusoidal",
    "sinusoidal_table",
    "softmax",
    "transpose",
]
