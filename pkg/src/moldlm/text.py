"""Word-level text tokenizer with character fallback for numerals.

All natural-language text in the toy tasks comes from fixed templates, so
the base vocabulary is a closed word list plus digits and punctuation.
Numbers tokenize digit-by-digit; rendering re-joins adjacent numeric
characters and tightens space before punctuation, making render/tokenize a
round trip on template output.
"""

from __future__ import annotations

import re

from .selfies import Vocab

__all__ = ["BASE_TEXT_TOKENS", "UNK", "tokenize_text", "render_text"]

UNK = "<unk>"

_PUNCT = (".", ",", "?", ":", ";")
_DIGITS = tuple("0123456789")

_WORDS = (
    "This", "molecule", "has", "heavy", "atom", "atoms", "contains", "a", "an",
    "ring", "no", "and", "with", "group", "groups", "carbonyl", "hydroxyl",
    "amine", "nitrile", "sulfur", "halogen", "carboxyl", "plain", "chain",
    "True", "False", "What", "is", "the", "of", "this", "its", "value",
    "Predict", "product", "when", "oxidized", "reactant", "that", "gives",
    "upon", "oxidation", "Describe", "structure", "in", "one", "sentence",
    "Give", "matching", "description", "path", "length", "index", "count",
    "Does", "contain", "nitrogen", "Answer", "or", "number", "as", "decimal",
    "smallest", "sum", "distance", "distances", "between", "all", "pairs",
)

BASE_TEXT_TOKENS: tuple[str, ...] = (UNK,) + _PUNCT + _DIGITS + _WORDS

_SPLIT_RE = re.compile(r"[^\s]+")


def _pieces(text: str) -> list[str]:
    out = []
    for chunk in _SPLIT_RE.findall(text):
        # peel punctuation off both ends
        prefix, suffix = [], []
        while chunk and chunk[0] in _PUNCT:
            prefix.append(chunk[0])
            chunk = chunk[1:]
        while chunk and chunk[-1] in _PUNCT:
            suffix.append(chunk[-1])
            chunk = chunk[:-1]
        out.extend(prefix)
        if chunk:
            out.append(chunk)
        out.extend(reversed(suffix))
    return out


def tokenize_text(text: str, vocab: Vocab) -> list[int]:
    """Tokenize template text: known words whole, numerals per character."""
    ids = []
    unk = vocab.token_to_id(UNK)
    for piece in _pieces(text):
        if piece in vocab:
            ids.append(vocab.token_to_id(piece))
        elif all(c in "0123456789." for c in piece):
            ids.extend(vocab.token_to_id(c) for c in piece)
        else:
            ids.append(unk)
    return ids


def render_text(ids, vocab: Vocab) -> str:
    """Join tokens back into text, merging numeric runs and punctuation."""
    tokens = [vocab.id_to_token(i) for i in ids]
    parts: list[str] = []
    numeric = set(_DIGITS) | {"."}
    for tok in tokens:
        if not parts:
            parts.append(tok)
            continue
        prev = parts[-1]
        if tok in _PUNCT and not (tok == "." and prev and prev[-1] in "0123456789"):
            parts[-1] = prev + tok
        elif prev and prev[-1] in numeric and tok in numeric:
            parts[-1] = prev + tok
        else:
            parts.append(tok)
    return " ".join(parts)
