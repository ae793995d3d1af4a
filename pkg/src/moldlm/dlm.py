"""Masked-diffusion transformer backbone.

The forward corruption masks response tokens independently at ratio t; the
model sees [aligned graph rows] ++ question ++ input string ++ corrupted
response with full bidirectional attention and predicts logits for every
response position at once. The training loss is the 1/t-weighted NLL over
masked positions only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import (
    Embedding,
    LayerNorm,
    Linear,
    ParameterStore,
    Tensor,
    TransformerLayer,
    concat,
    cross_entropy,
    sinusoidal_positions,
)

__all__ = [
    "DlmConfig",
    "DiffusionBatch",
    "forward_mask",
    "DiffusionLM",
    "dlm_loss",
    "extend_embeddings",
    "SEG_GRAPH",
    "SEG_QUESTION",
    "SEG_SELFIES",
    "SEG_RESPONSE",
]

SEG_GRAPH, SEG_QUESTION, SEG_SELFIES, SEG_RESPONSE = 0, 1, 2, 3


@dataclass
class DlmConfig:
    vocab_size: int
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int | None = None
    max_len: int = 256
    dtype: type = np.float64

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.d_ff is None:
            self.d_ff = 4 * self.d_model


@dataclass
class DiffusionBatch:
    """One training example: clean and corrupted response plus conditioning."""

    x0: np.ndarray          # clean response ids, length L
    t: float                # masking ratio in (0, 1]
    x_t: np.ndarray         # corrupted response: x0 off-mask, [MASK] on-mask
    mask: np.ndarray        # boolean, length L
    q: np.ndarray           # question ids
    s: np.ndarray           # input string ids (may be empty)
    h_aligned: Tensor | None = None

    def __post_init__(self):
        if not 0.0 < self.t <= 1.0:
            raise ValueError(f"t={self.t} outside (0, 1]")
        if self.x0.shape != self.x_t.shape or self.x0.shape != self.mask.shape:
            raise ValueError("x0/x_t/mask length mismatch")
        if np.any(self.x_t[~self.mask] != self.x0[~self.mask]):
            raise ValueError("x_t disagrees with x0 off-mask")

    @property
    def n_mask(self) -> int:
        return int(self.mask.sum())


def forward_mask(x0: np.ndarray, t: float, rng, mask_id: int) -> tuple[np.ndarray, np.ndarray]:
    """Independently replace each token with [MASK] with probability t."""
    if not 0.0 < t <= 1.0:
        raise ValueError(f"masking ratio t={t} outside (0, 1]")
    x0 = np.asarray(x0, dtype=np.int64)
    if np.any(x0 == mask_id):
        raise ValueError("x0 already contains the mask token")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    mask = rng.random(len(x0)) < t
    x_t = np.where(mask, mask_id, x0)
    return x_t, mask


class DiffusionLM:
    def __init__(self, store: ParameterStore, cfg: DlmConfig,
                 rng: np.random.Generator, prefix: str = "dlm"):
        self.cfg = cfg
        d, dt = cfg.d_model, cfg.dtype
        self.tok_emb = Embedding(store, f"{prefix}.tok_emb", cfg.vocab_size, d, rng, dtype=dt)
        self.seg_emb = Embedding(store, f"{prefix}.seg_emb", 4, d, rng, dtype=dt)
        self.layers = [
            TransformerLayer(store, f"{prefix}.layer{i}", d, cfg.n_heads, rng,
                             d_ff=cfg.d_ff, dtype=dt)
            for i in range(cfg.n_layers)
        ]
        self.final_ln = LayerNorm(store, f"{prefix}.final_ln", d, dtype=dt)
        self.out = Linear(store, f"{prefix}.out", d, cfg.vocab_size, rng, dtype=dt)
        self.pos = sinusoidal_positions(cfg.max_len, d, dtype=dt)

    # -- forward -----------------------------------------------------------------

    def predict(self, x_t, q, s, h_aligned: Tensor | None = None,
                pad_id: int | None = None) -> Tensor:
        """Logits (L, V) over the response region for one record."""
        x_t = np.asarray(x_t, dtype=np.int64)
        q = np.asarray(q, dtype=np.int64)
        s = np.asarray(s, dtype=np.int64)
        prompt = np.concatenate([q, s])
        segs = np.concatenate([np.full(len(q), SEG_QUESTION),
                               np.full(len(s), SEG_SELFIES)])
        h = None
        if h_aligned is not None:
            h = h_aligned.reshape(1, *h_aligned.shape)
        logits = self.predict_batch(x_t[None, :], prompt[None, :], segs[None, :],
                                    h_aligned=h, pad_id=pad_id)
        return logits[0]

    def predict_batch(self, x_t: np.ndarray, prompt_ids: np.ndarray,
                      prompt_segs: np.ndarray, h_aligned: Tensor | None = None,
                      pad_id: int | None = None) -> Tensor:
        """Batched logits (B, R, V); prompts may be right-padded with pad_id.

        Records in a batch share the response length R; [PAD] keys are hidden
        from attention. Attention is fully bidirectional.
        """
        B, R = x_t.shape
        P = prompt_ids.shape[1]
        ids = np.concatenate([prompt_ids, x_t], axis=1)
        segs = np.concatenate([prompt_segs, np.full((B, R), SEG_RESPONSE)], axis=1)
        n_soft = h_aligned.shape[1] if h_aligned is not None else 0
        total = n_soft + P + R
        if total > self.cfg.max_len:
            raise ValueError(f"sequence length {total} exceeds max_len {self.cfg.max_len}")

        # tokens are positioned from 0 whether or not soft rows are present;
        # the aligned rows are an unordered conditioning set and carry only
        # their segment embedding
        x = self.tok_emb(ids) + self.seg_emb(segs) + Tensor(self.pos[:P + R])
        if h_aligned is not None:
            soft = h_aligned + self.seg_emb.table[SEG_GRAPH]
            x = concat([soft, x], axis=1)

        mask = None
        if pad_id is not None:
            hide = np.zeros((B, total), dtype=bool)
            hide[:, n_soft:] = ids == pad_id
            if hide.any():
                mask = hide[:, None, None, :]
        for layer in self.layers:
            x = layer(x, mask=mask)
        resp = x[:, n_soft + P:]
        return self.out(self.final_ln(resp))


def dlm_loss(batch: DiffusionBatch, logits: Tensor) -> Tensor:
    """(1/t) * sum over masked positions of -log p(x0_i); 0 when nothing is masked."""
    if batch.n_mask == 0:
        return Tensor(np.zeros(()))
    weights = batch.mask.astype(logits.dtype) / batch.t
    return cross_entropy(logits, batch.x0, weights)


def extend_embeddings(table: np.ndarray, n_new: int, rng) -> np.ndarray:
    """Append n_new rows drawn from a normal matching the existing entries'
    scalar mean and standard deviation; existing rows are copied bit-exactly."""
    if n_new < 0:
        raise ValueError("n_new must be >= 0")
    table = np.asarray(table)
    if table.size == 0:
        raise ValueError("cannot extend an empty embedding table")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    if n_new == 0:
        return table.copy()
    mu = float(table.mean())
    sigma = float(table.std())
    new_rows = rng.normal(mu, sigma, size=(n_new, table.shape[1])).astype(table.dtype)
    return np.concatenate([table, new_rows], axis=0)
