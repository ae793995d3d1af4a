"""Neural layers built on the Tensor tape, with parameters held in a ParameterStore.

Weight matrices initialize from a zero-mean normal with std 1/sqrt(fan_in);
embedding tables use std 0.02. All layers accept an optional leading batch
axis: inputs are (..., L, d).
"""

from __future__ import annotations

import numpy as np

from .params import ParameterStore
from .tensor import Tensor, affine, layer_norm, scaled_dot_attention

__all__ = [
    "Linear",
    "Embedding",
    "LayerNorm",
    "FeedForward",
    "MultiHeadAttention",
    "TransformerLayer",
    "sinusoidal_positions",
    "causal_mask",
]


class Linear:
    def __init__(self, store: ParameterStore, name: str, d_in: int, d_out: int,
                 rng: np.random.Generator, bias: bool = True, dtype=np.float64):
        std = 1.0 / np.sqrt(d_in)
        self.w = store.add(f"{name}.w", rng.normal(0.0, std, size=(d_in, d_out)), dtype=dtype)
        self.b = store.add(f"{name}.b", np.zeros(d_out), dtype=dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return affine(x, self.w, self.b)


class Embedding:
    def __init__(self, store: ParameterStore, name: str, n: int, d: int,
                 rng: np.random.Generator, std: float = 0.02, dtype=np.float64):
        self.table = store.add(f"{name}.table", rng.normal(0.0, std, size=(n, d)), dtype=dtype)

    def __call__(self, ids) -> Tensor:
        return self.table.take_rows(np.asarray(ids, dtype=np.int64))


class LayerNorm:
    def __init__(self, store: ParameterStore, name: str, d: int, eps: float = 1e-5,
                 dtype=np.float64):
        self.scale = store.add(f"{name}.scale", np.ones(d), dtype=dtype)
        self.shift = store.add(f"{name}.shift", np.zeros(d), dtype=dtype)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.scale, self.shift, eps=self.eps)


class FeedForward:
    """Two-layer position-wise perceptron with ReLU."""

    def __init__(self, store: ParameterStore, name: str, d: int, d_hidden: int,
                 rng: np.random.Generator, dtype=np.float64):
        self.fc1 = Linear(store, f"{name}.fc1", d, d_hidden, rng, dtype=dtype)
        self.fc2 = Linear(store, f"{name}.fc2", d_hidden, d, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(self.fc1(x).relu())


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    *lead, L, d = x.shape
    dk = d // n_heads
    x = x.reshape(*lead, L, n_heads, dk)
    axes = list(range(x.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    return x.transpose(*axes)


def _merge_heads(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    x = x.transpose(*axes)
    *lead, L, h, dk = x.shape
    return x.reshape(*lead, L, h * dk)


class MultiHeadAttention:
    """Scaled dot-product attention over n_heads with learned projections.

    ``use_query_proj=False`` feeds the raw queries to the score computation
    (cross-attention variants where the query bank is itself learned).
    ``mask`` must be a boolean ndarray broadcastable to the score matrix
    (..., heads, n_q, n_k); True hides a key.
    """

    def __init__(self, store: ParameterStore, name: str, d_model: int, n_heads: int,
                 rng: np.random.Generator, use_query_proj: bool = True, dtype=np.float64):
        if d_model % n_heads != 0:
            raise ValueError(f"d_model {d_model} not divisible by n_heads {n_heads}")
        self.n_heads = n_heads
        self.wq = Linear(store, f"{name}.wq", d_model, d_model, rng, bias=False, dtype=dtype) \
            if use_query_proj else None
        self.wk = Linear(store, f"{name}.wk", d_model, d_model, rng, bias=False, dtype=dtype)
        self.wv = Linear(store, f"{name}.wv", d_model, d_model, rng, bias=False, dtype=dtype)
        self.wo = Linear(store, f"{name}.wo", d_model, d_model, rng, bias=False, dtype=dtype)

    def __call__(self, x_q: Tensor, x_kv: Tensor, mask=None) -> Tensor:
        q = self.wq(x_q) if self.wq is not None else x_q
        k = self.wk(x_kv)
        v = self.wv(x_kv)
        qh = _split_heads(q, self.n_heads)
        kh = _split_heads(k, self.n_heads)
        vh = _split_heads(v, self.n_heads)
        out = scaled_dot_attention(qh, kh, vh, mask=mask)
        return self.wo(_merge_heads(out))


class TransformerLayer:
    """Pre-norm self-attention + feed-forward block with residuals."""

    def __init__(self, store: ParameterStore, name: str, d_model: int, n_heads: int,
                 rng: np.random.Generator, d_ff: int | None = None, dtype=np.float64):
        d_ff = d_ff if d_ff is not None else 4 * d_model
        self.ln1 = LayerNorm(store, f"{name}.ln1", d_model, dtype=dtype)
        self.attn = MultiHeadAttention(store, f"{name}.attn", d_model, n_heads, rng, dtype=dtype)
        self.ln2 = LayerNorm(store, f"{name}.ln2", d_model, dtype=dtype)
        self.ffn = FeedForward(store, f"{name}.ffn", d_model, d_ff, rng, dtype=dtype)

    def __call__(self, x: Tensor, mask=None) -> Tensor:
        h = self.ln1(x)
        x = x + self.attn(h, h, mask=mask)
        x = x + self.ffn(self.ln2(x))
        return x


def sinusoidal_positions(n: int, d: int, dtype=np.float64) -> np.ndarray:
    """Fixed sin/cos position table of shape (n, d)."""
    pos = np.arange(n, dtype=np.float64)[:, None]
    dim = np.arange(d // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * dim / d)
    table = np.zeros((n, d), dtype=np.float64)
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table.astype(dtype)


def causal_mask(n: int) -> np.ndarray:
    """Boolean (n, n) mask hiding keys strictly right of the query position."""
    return np.triu(np.ones((n, n), dtype=bool), k=1)
