"""Minimal reverse-mode differentiation engine, layers and optimiser."""

from .gradcheck import GradCheckReport, grad_check
from .layers import (BatchNormState, activation, batch_norm, conv1d_same, dropout, linear,
                     lstm_sequence, scaled_dot_product_attention)
from .optim import AdamState, adam_step
from .tensor import Tensor, as_tensor, concat, grad_enabled, matmul, no_grad, stack, where

__all__ = [
    "AdamState", "BatchNormState", "GradCheckReport", "Tensor", "activation", "adam_step",
    "as_tensor", "batch_norm", "concat", "conv1d_same", "dropout", "grad_check", "grad_enabled",
    "linear", "lstm_sequence", "matmul", "no_grad", "scaled_dot_product_attention", "stack", "where",
]
