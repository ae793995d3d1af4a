"""Cross-modal projector: a bank of learned queries cross-attends to the
variable-length hybrid graph rows and emits a fixed-length aligned embedding
in the language-model width.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import HybridEmbedding
from .numerics import (
    FeedForward,
    LayerNorm,
    Linear,
    MultiHeadAttention,
    ParameterStore,
    Tensor,
)

__all__ = ["AlignerConfig", "QFormer"]


@dataclass
class AlignerConfig:
    n_queries: int = 32
    d_model: int = 128         # language-model width
    d_in: int = 64             # encoder width d_g
    n_heads: int = 4
    depth: int = 1             # >= 2 adds self-attention among queries
    dtype: type = np.float64

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")


class QFormer:
    """Learned queries -> multi-head cross-attention over projected graph rows
    -> position-wise feed-forward, with residuals and normalization.

    The queries enter the score computation directly (no query projection);
    keys and values come from learned projections of the input rows. Depth 1
    is the default; deeper stacks insert query self-attention per layer.
    Output is always (n_queries, d_model) regardless of graph size.
    """

    def __init__(self, store: ParameterStore, cfg: AlignerConfig,
                 rng: np.random.Generator, prefix: str = "aligner"):
        self.cfg = cfg
        d, dt = cfg.d_model, cfg.dtype
        self.queries = store.add(f"{prefix}.queries",
                                 rng.normal(0.0, 0.02, size=(cfg.n_queries, d)), dtype=dt)
        self.in_proj = Linear(store, f"{prefix}.in_proj", cfg.d_in, d, rng, dtype=dt)
        self.blocks = []
        for i in range(cfg.depth):
            self_attn = None
            if cfg.depth >= 2:
                self_attn = (
                    MultiHeadAttention(store, f"{prefix}.block{i}.self", d, cfg.n_heads,
                                       rng, dtype=dt),
                    LayerNorm(store, f"{prefix}.block{i}.ln_self", d, dtype=dt),
                )
            cross = MultiHeadAttention(store, f"{prefix}.block{i}.cross", d, cfg.n_heads,
                                       rng, use_query_proj=False, dtype=dt)
            ln_cross = LayerNorm(store, f"{prefix}.block{i}.ln_cross", d, dtype=dt)
            ffn = FeedForward(store, f"{prefix}.block{i}.ffn", d, 4 * d, rng, dtype=dt)
            ln_ffn = LayerNorm(store, f"{prefix}.block{i}.ln_ffn", d, dtype=dt)
            self.blocks.append((self_attn, cross, ln_cross, ffn, ln_ffn))

    def __call__(self, hybrid: HybridEmbedding | Tensor, key_mask=None) -> Tensor:
        """Aligned rows for one graph (M, d_in) or a padded batch (B, M, d_in).

        ``key_mask`` (True = real row) hides padding in the batched case.
        Single-graph output is (n_queries, d_model); batched is
        (B, n_queries, d_model).
        """
        rows = hybrid.rows if isinstance(hybrid, HybridEmbedding) else hybrid
        if rows.shape[-2] == 0:
            raise ValueError("empty hybrid embedding")
        if rows.shape[-1] != self.cfg.d_in:
            raise ValueError(f"expected input width {self.cfg.d_in}, got {rows.shape[-1]}")
        mask = None
        if key_mask is not None:
            hide = ~np.asarray(key_mask, dtype=bool)
            if hide.any():
                mask = hide[:, None, None, :]  # broadcast over heads and queries
        kv = self.in_proj(rows)
        x = self.queries
        for self_attn, cross, ln_cross, ffn, ln_ffn in self.blocks:
            if self_attn is not None:
                attn, ln = self_attn
                x = ln(x + attn(x, x))
            x = ln_cross(x + cross(x, kv, mask=mask))
            x = ln_ffn(x + ffn(x))
        return x
