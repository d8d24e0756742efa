"""Differentiable computation core: tensors, layer ops, Adam, gradient checks."""

from .checkpoint import (
    CheckpointError,
    CheckpointVersionError,
    load_checkpoint,
    load_into,
    save_checkpoint,
)
from .gradcheck import finite_diff_grad_check
from .layers import BiLstm, Conv2d, ConvTranspose2d, Dense, he_uniform, xavier_uniform
from .ops import (
    conv2d,
    conv2d_transpose,
    conv_output_size,
    dense,
    mse,
    softmax_cross_entropy,
)
from .optim import Adam, AdamState, NonFiniteGradientError, adam_step
from .rng import Rng
from .rnn import EmptySequenceError, LstmParams, bilstm, lstm_run
from .tensor import (
    ShapeError,
    Tensor,
    add,
    assert_finite,
    concat,
    exp,
    flip,
    mul,
    neg,
    gather_rows,
    index,
    log,
    matmul,
    relu,
    reshape,
    sigmoid,
    softmax,
    stop_gradient,
    straight_through,
    tanh,
    tensor_mean,
    tensor_sum,
    transpose,
)

__all__ = [
    "Adam",
    "AdamState",
    "BiLstm",
    "CheckpointError",
    "CheckpointVersionError",
    "Conv2d",
    "ConvTranspose2d",
    "Dense",
    "EmptySequenceError",
    "LstmParams",
    "NonFiniteGradientError",
    "Rng",
    "ShapeError",
    "Tensor",
    "adam_step",
    "assert_finite",
    "bilstm",
    "concat",
    "conv2d",
    "conv2d_transpose",
    "conv_output_size",
    "dense",
    "exp",
    "finite_diff_grad_check",
    "flip",
    "gather_rows",
    "he_uniform",
    "index",
    "add",
    "load_checkpoint",
    "load_into",
    "log",
    "lstm_run",
    "matmul",
    "mse",
    "mul",
    "neg",
    "relu",
    "reshape",
    "save_checkpoint",
    "sigmoid",
    "softmax",
    "softmax_cross_entropy",
    "stop_gradient",
    "straight_through",
    "tanh",
    "tensor_mean",
    "tensor_sum",
    "transpose",
    "xavier_uniform",
]
