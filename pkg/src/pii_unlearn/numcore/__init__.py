from pii_unlearn.numcore.errors import ContractError, DimensionError, NumericError
from pii_unlearn.numcore.optim import AdamW, OptimConfig, clip_grad_norm, cosine_lr
from pii_unlearn.numcore.tensor import (
    Tape,
    Tensor,
    active_tape,
    add,
    backward,
    causal_attention,
    concat,
    cross_entropy_tokenwise,
    dropout,
    embedding,
    gelu,
    layer_norm,
    linear,
    log_softmax_rows,
    matmul,
    mean_all,
    mul,
    relu,
    reshape,
    scale,
    softmax_rows,
    sub,
    sum_all,
    take_rows,
    tanh,
    transpose,
    weighted_sum,
)

__all__ = [
    "AdamW",
    "ContractError",
    "DimensionError",
    "NumericError",
    "OptimConfig",
    "Tape",
    "Tensor",
    "active_tape",
    "add",
    "backward",
    "causal_attention",
    "clip_grad_norm",
    "concat",
    "cosine_lr",
    "cross_entropy_tokenwise",
    "dropout",
    "embedding",
    "gelu",
    "layer_norm",
    "linear",
    "log_softmax_rows",
    "matmul",
    "mean_all",
    "mul",
    "relu",
    "reshape",
    "scale",
    "softmax_rows",
    "sub",
    "sum_all",
    "take_rows",
    "tanh",
    "transpose",
    "weighted_sum",
]
