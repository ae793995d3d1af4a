"""Iterative denoising inference with low-confidence remasking.

Two strategies: full-sequence pure diffusion (molecule outputs) and
left-to-right block diffusion (text/number outputs). Both start fully
masked, predict all masked positions every step, finalize the
highest-confidence candidates on a linear schedule, and remask the rest.
Finalized tokens are never revisited.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .numerics import Tensor, no_grad
from .selfies import Vocab

__all__ = [
    "SamplerConfig",
    "Conditioning",
    "StepRecord",
    "DenoiseTrace",
    "sample_pure",
    "sample_block",
    "truncate_eos",
]


@dataclass
class SamplerConfig:
    steps: int = 64                # denoising steps T
    gen_len: int = 32
    strategy: str = "pure"         # "pure" | "block"
    block_len: int = 32
    temperature: float = 0.0       # 0 = greedy argmax
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.gen_len < 1:
            raise ValueError("gen_len must be >= 1")
        if self.strategy not in ("pure", "block"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.block_len < 1:
            raise ValueError("block_len must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass
class Conditioning:
    q: np.ndarray
    s: np.ndarray
    h_aligned: Tensor | None = None


@dataclass
class StepRecord:
    step: int
    new_positions: list[int]
    new_tokens: list[int]
    confidences: list[float]
    finalized_total: int


@dataclass
class DenoiseTrace:
    steps: list[StepRecord] = field(default_factory=list)

    def to_jsonl(self) -> str:
        lines = []
        for r in self.steps:
            lines.append(json.dumps({
                "step": r.step,
                "finalized": r.new_positions,
                "tokens": r.new_tokens,
                "confidences": [round(c, 6) for c in r.confidences],
                "total": r.finalized_total,
            }))
        return "\n".join(lines)

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_jsonl() + "\n")


def _scheduled(length: int, k: int, steps: int) -> int:
    """Linear unmasking schedule: finalized count after step k (round half up)."""
    return int(np.floor(length * k / steps + 0.5))


def _predict_logits(model, x: np.ndarray, cond: Conditioning) -> np.ndarray:
    with no_grad():
        out = model.predict(x, cond.q, cond.s, cond.h_aligned)
    return np.asarray(getattr(out, "data", out), dtype=np.float64)


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _denoise_span(model, cond: Conditioning, x: np.ndarray, finalized: np.ndarray,
                  span: tuple[int, int], steps: int, cfg: SamplerConfig,
                  rng: np.random.Generator, trace: DenoiseTrace, step_base: int) -> None:
    """Run the schedule on [lo, hi); other positions stay untouched."""
    lo, hi = span
    length = hi - lo
    for k in range(1, steps + 1):
        logits = _predict_logits(model, x, cond)
        open_pos = np.flatnonzero(~finalized[lo:hi]) + lo
        target = _scheduled(length, k, steps)
        n_new = target - int(finalized[lo:hi].sum())
        if len(open_pos):
            probs = _softmax_rows(logits[open_pos])
            if cfg.temperature == 0:
                cand = probs.argmax(axis=-1)
            else:
                tempered = _softmax_rows(logits[open_pos] / cfg.temperature)
                cand = np.array([rng.choice(len(p), p=p) for p in tempered])
            conf = probs[np.arange(len(open_pos)), cand]
        else:
            cand = np.zeros(0, dtype=np.int64)
            conf = np.zeros(0)
        if n_new > 0:
            # highest confidence first; ties broken by ascending position
            order = np.lexsort((open_pos, -conf))[:n_new]
            chosen = open_pos[order]
            tokens = cand[order]
            x[chosen] = tokens
            finalized[chosen] = True
            rec = StepRecord(step_base + k, [int(p) for p in chosen],
                             [int(t) for t in tokens],
                             [float(c) for c in conf[order]],
                             int(finalized.sum()))
        else:
            rec = StepRecord(step_base + k, [], [], [], int(finalized.sum()))
        trace.steps.append(rec)


def sample_pure(model, cond: Conditioning, cfg: SamplerConfig,
                vocab: Vocab) -> tuple[np.ndarray, DenoiseTrace]:
    """Full-sequence diffusion: one schedule over all gen_len positions."""
    L = cfg.gen_len
    x = np.full(L, vocab.mask_id, dtype=np.int64)
    finalized = np.zeros(L, dtype=bool)
    rng = np.random.default_rng(cfg.seed)
    trace = DenoiseTrace()
    _denoise_span(model, cond, x, finalized, (0, L), cfg.steps, cfg, rng, trace, 0)
    assert finalized.all(), "schedule must finalize every position"
    return x, trace


def sample_block(model, cond: Conditioning, cfg: SamplerConfig,
                 vocab: Vocab) -> tuple[np.ndarray, DenoiseTrace]:
    """Left-to-right block diffusion; completed blocks are frozen context."""
    L = cfg.gen_len
    x = np.full(L, vocab.mask_id, dtype=np.int64)
    finalized = np.zeros(L, dtype=bool)
    rng = np.random.default_rng(cfg.seed)
    trace = DenoiseTrace()
    step_base = 0
    # per-block budget proportional to block length, minimum one step
    steps_b = max(1, int(np.floor(cfg.steps * cfg.block_len / L + 0.5)))
    for lo in range(0, L, cfg.block_len):
        hi = min(lo + cfg.block_len, L)
        _denoise_span(model, cond, x, finalized, (lo, hi), steps_b, cfg, rng, trace, step_base)
        step_base += steps_b
    assert finalized.all(), "every block must fully unmask"
    return x, trace


def truncate_eos(tokens: np.ndarray, eos_id: int) -> np.ndarray:
    """Prefix strictly before the first EOS; unchanged when EOS is absent."""
    tokens = np.asarray(tokens)
    hits = np.flatnonzero(tokens == eos_id)
    if len(hits) == 0:
        return tokens
    return tokens[: hits[0]]
