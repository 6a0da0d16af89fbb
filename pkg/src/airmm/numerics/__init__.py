"""Tensor arithmetic, reverse-mode autodiff, and small linear-algebra helpers."""

from .gradcheck import grad_check
from .linalg import dft_codebook, from_interleaved, svd_principal, to_interleaved
from .optim import Adam
from .tensor import (
    Tensor,
    add,
    broadcast_to,
    concat,
    cross_entropy,
    exp,
    gelu,
    getitem,
    l2_normalize,
    layer_norm,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    power,
    relu,
    reshape,
    softmax_rows,
    sqrt,
    stack,
    tanh,
    tensor,
    transpose,
    tsum,
)

__all__ = [
    "Adam",
    "Tensor",
    "add",
    "broadcast_to",
    "concat",
    "cross_entropy",
    "dft_codebook",
    "exp",
    "from_interleaved",
    "gelu",
    "getitem",
    "grad_check",
    "l2_normalize",
    "layer_norm",
    "log",
    "log_softmax",
    "matmul",
    "mean",
    "mul",
    "power",
    "relu",
    "reshape",
    "softmax_rows",
    "sqrt",
    "stack",
    "svd_principal",
    "tanh",
    "tensor",
    "to_interleaved",
    "transpose",
    "tsum",
]
