"""Tensor autodiff substrate: tape, layers, optimizer, gradient checking, checkpoints."""

from .tensor import (
    Tensor,
    tensor,
    no_grad,
    is_grad_enabled,
    concat,
    stack,
    softmax,
    log_softmax,
    layer_norm,
    scaled_dot_attention,
    cross_entropy,
    affine,
    minimum,
    softplus,
    backward,
)
from .params import ParameterStore
from .optim import AdamW
from .gradcheck import grad_check
from .checkpoint import save_tensors, load_tensors
from .random import SeedStream
from .layers import (
    Linear,
    Embedding,
    LayerNorm,
    FeedForward,
    MultiHeadAttention,
    TransformerLayer,
    sinusoidal_positions,
    causal_mask,
)

__all__ = [
    "Tensor", "tensor", "no_grad", "is_grad_enabled", "concat", "stack",
    "softmax", "log_softmax", "layer_norm", "scaled_dot_attention",
    "cross_entropy", "affine", "minimum", "softplus", "backward",
    "ParameterStore", "AdamW", "grad_check", "save_tensors", "load_tensors",
    "SeedStream", "Linear", "Embedding", "LayerNorm", "FeedForward",
    "MultiHeadAttention", "TransformerLayer", "sinusoidal_positions", "causal_mask",
]
