from .nn import Conv2d, Deconv2d, Linear, conv2d, coordconv_augment, deconv2d, linear
from .optim import Adam, AdamState, adam_step, clip_global_norm
from .tensor import (
    NonFiniteError,
    Tape,
    Tensor,
    abs_,
    add,
    backward,
    broadcast_to,
    concat,
    get_default_dtype,
    matmul,
    mean,
    mul,
    precision,
    relu,
    reshape,
    set_default_dtype,
    sub,
    sum_,
)

__all__ = [
    "Adam",
    "AdamState",
    "Conv2d",
    "Deconv2d",
    "Linear",
    "NonFiniteError",
    "Tape",
    "Tensor",
    "abs_",
    "adam_step",
    "add",
    "backward",
    "broadcast_to",
    "clip_global_norm",
    "concat",
    "conv2d",
    "coordconv_augment",
    "deconv2d",
    "get_default_dtype",
    "linear",
    "matmul",
    "mean",
    "mul",
    "precision",
    "relu",
    "reshape",
    "set_default_dtype",
    "sub",
    "sum_",
]
