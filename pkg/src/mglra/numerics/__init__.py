from .gradcheck import GradCheckReport, grad_check, relative_error
from .init import Module, glorot_scale, seeded_uniform_init, zeros_param
from .rng import RngStream, derive_seed
from .tensor import (
    NonFiniteError,
    ShapeError,
    Tensor,
    add,
    arccos,
    as_tensor,
    attention_heads,
    clip,
    concat,
    div,
    exp,
    getitem,
    grad_enabled,
    log,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    scatter_dense,
    segment_sum,
    sigmoid,
    softmax,
    spmm,
    sqrt,
    sub,
    sum_,
    swapaxes,
    take_rows,
    tanh,
    transpose,
    vector_angle,
)

__all__ = [
    "GradCheckReport",
    "Module",
    "NonFiniteError",
    "RngStream",
    "ShapeError",
    "Tensor",
    "add",
    "arccos",
    "as_tensor",
    "attention_heads",
    "clip",
    "concat",
    "derive_seed",
    "div",
    "exp",
    "getitem",
    "glorot_scale",
    "grad_check",
    "grad_enabled",
    "log",
    "matmul",
    "mean",
    "mul",
    "no_grad",
    "relative_error",
    "relu",
    "reshape",
    "scatter_dense",
    "seeded_uniform_init",
    "segment_sum",
    "sigmoid",
    "softmax",
    "spmm",
    "sqrt",
    "sub",
    "sum_",
    "swapaxes",
    "take_rows",
    "tanh",
    "transpose",
    "vector_angle",
    "zeros_param",
]
