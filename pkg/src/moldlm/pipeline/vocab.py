"""Full model vocabulary: reserved control ids, base text tokens, then the
molecular dialect appended as a contiguous extension block."""

from __future__ import annotations

from ..selfies import DIALECT_TOKENS, Vocab, extend_vocab
from ..text import BASE_TEXT_TOKENS

__all__ = ["build_vocab", "SELFIES_BLOCK"]

SELFIES_BLOCK = "selfies"


def build_vocab() -> Vocab:
    base = Vocab(BASE_TEXT_TOKENS)
    return extend_vocab(base, DIALECT_TOKENS, label=SELFIES_BLOCK)
