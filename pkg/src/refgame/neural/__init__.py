"""Minimal differentiable-compute kernel: primitive layers with exact
analytic gradients, a GRU, a linear-chain CRF, Adam, and finite-difference
gradient verification.  numpy arrays throughout; the recurrent hot loops
have numba and pure-numpy backends (see kernels.py)."""

from . import kernels
from .adam import Adam
from .crf import (
    crf_log_partition,
    crf_nll,
    crf_path_score,
    crf_posteriors,
    crf_viterbi,
)
from .gradcheck import GradCheckReport, gradient_check
from .gru import add_gru_params, gru_cell, gru_sequence, gru_sequence_backward
from .ops import (
    bce_with_logits,
    cross_entropy,
    cross_entropy_rows,
    dropout_mask,
    linear,
    linear_backward,
    log_softmax,
    logsumexp,
    mlp,
    mlp_backward,
    sigmoid,
    sigmoid_backward,
    softmax,
    softmax_backward,
    tanh,
    tanh_backward,
)
from .params import ParamStore

__all__ = [
    "Adam",
    "GradCheckReport",
    "ParamStore",
    "add_gru_params",
    "bce_with_logits",
    "crf_log_partition",
    "crf_nll",
    "crf_path_score",
    "crf_posteriors",
    "crf_viterbi",
    "cross_entropy",
    "cross_entropy_rows",
    "dropout_mask",
    "gradient_check",
    "gru_cell",
    "gru_sequence",
    "gru_sequence_backward",
    "kernels",
    "linear",
    "linear_backward",
    "log_softmax",
    "logsumexp",
    "mlp",
    "mlp_backward",
    "sigmoid",
    "sigmoid_backward",
    "softmax",
    "softmax_backward",
    "tanh",
    "tanh_backward",
]
