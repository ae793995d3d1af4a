"""Constrained molecular string dialect: tokenizer, vocabulary, and codec.

The dialect guarantees totality: every sequence of dialect tokens decodes to
a valence-valid connected molecular graph (possibly empty). Impossible
actions are skipped silently. The encoder serializes a graph along a
deterministic depth-first spanning tree so that decode(encode(g)) is
isomorphic to g on the expressible set.

Alphabet (26 tokens): six elements with plain/double/triple attachment
prefixes, three branch openers, five ring closers.
"""

from __future__ import annotations

import re
from typing import Iterable, Sequence

from .molgraph import VALENCE, MolecularGraph

__all__ = [
    "DIALECT_TOKENS",
    "RESERVED_TOKENS",
    "TokenizationError",
    "InexpressibleGraphError",
    "split_tokens",
    "render_tokens",
    "decode_tokens",
    "encode_graph",
    "Vocab",
    "extend_vocab",
    "tokenize_selfies",
    "decode_ids",
    "encode_to_ids",
]

_ATOM_ELEMENTS = ("C", "N", "O", "F", "S", "P")
_ORDER_PREFIX = {1: "", 2: "=", 3: "#"}
MAX_BRANCH = 3
MAX_RING = 5

DIALECT_TOKENS: tuple[str, ...] = tuple(
    f"[{_ORDER_PREFIX[o]}{el}]" for o in (1, 2, 3) for el in _ATOM_ELEMENTS
) + tuple(f"[Branch{k}]" for k in range(1, MAX_BRANCH + 1)) \
  + tuple(f"[Ring{k}]" for k in range(1, MAX_RING + 1))

DIALECT_INDEX: dict[str, int] = {tok: i for i, tok in enumerate(DIALECT_TOKENS)}

# token -> ("atom", element, requested_order) | ("branch", k) | ("ring", k)
_TOKEN_ACTION: dict[str, tuple] = {}
for _o in (1, 2, 3):
    for _el in _ATOM_ELEMENTS:
        _TOKEN_ACTION[f"[{_ORDER_PREFIX[_o]}{_el}]"] = ("atom", _el, _o)
for _k in range(1, MAX_BRANCH + 1):
    _TOKEN_ACTION[f"[Branch{_k}]"] = ("branch", _k)
for _k in range(1, MAX_RING + 1):
    _TOKEN_ACTION[f"[Ring{_k}]"] = ("ring", _k)


class TokenizationError(ValueError):
    pass


class InexpressibleGraphError(ValueError):
    pass


_TOKEN_RE = re.compile(r"\[[^\[\]]*\]")


def split_tokens(text: str) -> list[str]:
    """Split a bracketed token string like "[C][=O]" into its tokens."""
    tokens = _TOKEN_RE.findall(text)
    if "".join(tokens) != text:
        raise TokenizationError(f"unbalanced or stray characters in {text!r}")
    return tokens


def render_tokens(tokens: Iterable[str]) -> str:
    return "".join(tokens)


# -- decoding -------------------------------------------------------------------


def decode_tokens(tokens: Sequence[str]) -> MolecularGraph:
    """Total decoder: any sequence of dialect tokens yields a valid graph.

    Rules: an atom token bonds a new atom to the current attachment atom at
    min(requested order, both remaining valences), skipping if either side is
    saturated; [BranchK] redirects the next K effective tokens (atom
    creations and nested branch openers) to a branch rooted at the current
    atom; [RingK] adds a single bond to the atom K creation positions back.
    Impossible actions are skipped. Unknown tokens raise ValueError.
    """
    elements: list[str] = []
    order_sum: list[int] = []
    bonds: dict[tuple[int, int], int] = {}
    current: int | None = None
    # stack of [return_atom, remaining_budget]
    branches: list[list[int]] = []

    def rem(i: int) -> int:
        return VALENCE[elements[i]] - order_sum[i]

    def count_effective() -> None:
        if branches:
            branches[-1][1] -= 1

    def unwind() -> None:
        nonlocal current
        while branches and branches[-1][1] <= 0:
            current = branches.pop()[0]

    for tok in tokens:
        action = _TOKEN_ACTION.get(tok)
        if action is None:
            raise ValueError(f"unknown dialect token {tok!r}")
        kind = action[0]
        if kind == "atom":
            _, el, req = action
            if current is None:
                elements.append(el)
                order_sum.append(0)
                current = 0
                continue
            unwind()
            order = min(req, rem(current), VALENCE[el])
            if order < 1:
                continue  # saturated attachment point: skip
            new = len(elements)
            elements.append(el)
            order_sum.append(order)
            order_sum[current] += order
            bonds[(current, new)] = order
            current = new
            count_effective()
        elif kind == "branch":
            if current is None:
                continue
            unwind()
            count_effective()
            branches.append([current, action[1]])
        else:  # ring
            # No unwind here: a ring closer directly after a branch's last
            # counted token still binds at the deep atom, mirroring the
            # encoder's emission order. Positions are creation indices.
            if current is None:
                continue
            partner = current - min(action[1], current)
            if partner == current:
                continue
            key = (min(partner, current), max(partner, current))
            if key in bonds:
                continue
            if rem(current) < 1 or rem(partner) < 1:
                continue
            bonds[key] = 1
            order_sum[current] += 1
            order_sum[partner] += 1

    return MolecularGraph(tuple(elements),
                          tuple((u, v, o) for (u, v), o in bonds.items()))


# -- encoding ----------------------------------------------------------------------


def encode_graph(g: MolecularGraph) -> list[str]:
    """Canonical serialization along an ascending-index depth-first tree.

    At each atom the lowest-index unvisited neighbor chain continues the
    main chain; the remaining children are wrapped in branch tokens; cycle
    edges close with ring tokens at the later-visited endpoint. Raises
    InexpressibleGraphError for graphs the dialect cannot carry
    (disconnected, branch budget over 3, ring span over 5, or a cycle that
    must close on a multiple bond).
    """
    if g.n_atoms == 0:
        return []
    if not g.is_connected():
        raise InexpressibleGraphError("graph is disconnected")

    nbrs = {i: sorted(pairs) for i, pairs in g.neighbor_map().items()}
    pos: dict[int, int] = {}
    emitted_rings: set[tuple[int, int]] = set()

    def atom_token(el: str, order: int) -> str:
        return f"[{_ORDER_PREFIX[order]}{el}]"

    def walk(v: int, parent: int | None, incoming: int) -> tuple[list[str], int]:
        pos[v] = len(pos)
        tokens = [atom_token(g.elements[v], incoming)]
        counted = 1
        for w, order in nbrs[v]:
            if w == parent or w not in pos:
                continue
            key = (min(v, w), max(v, w))
            if key in emitted_rings:
                continue
            if order != 1:
                raise InexpressibleGraphError(
                    f"cycle through ({v},{w}) closes on a bond of order {order}")
            span = pos[v] - pos[w]
            if span > MAX_RING:
                raise InexpressibleGraphError(
                    f"ring span {span} between atoms {w} and {v} exceeds {MAX_RING}")
            tokens.append(f"[Ring{span}]")
            emitted_rings.add(key)
        subtrees: list[tuple[list[str], int]] = []
        for w, order in nbrs[v]:
            if w in pos:
                continue
            subtrees.append(walk(w, v, order))
        for child_tokens, child_count in subtrees[:-1]:
            if child_count > MAX_BRANCH:
                raise InexpressibleGraphError(
                    f"branch needs budget {child_count} > {MAX_BRANCH}")
            tokens.append(f"[Branch{child_count}]")
            tokens.extend(child_tokens)
            counted += 1
        if subtrees:
            child_tokens, child_count = subtrees[-1]
            tokens.extend(child_tokens)
            counted += child_count
        return tokens, counted

    tokens, _ = walk(0, None, 1)
    return tokens


# -- vocabulary ----------------------------------------------------------------------

RESERVED_TOKENS = ("[MASK]", "[EOS]", "[PAD]", "[BOS]")


class Vocab:
    """Bijective token/id map with reserved control ids and labeled blocks.

    Immutable: extensions produce a new Vocab (see extend_vocab). Reserved
    control tokens occupy ids 0..3 and are never reassigned.
    """

    def __init__(self, base_tokens: Sequence[str] = (),
                 _tokens: tuple[str, ...] | None = None,
                 _blocks: dict[str, tuple[int, int]] | None = None):
        if _tokens is not None:
            tokens = _tokens
        else:
            tokens = RESERVED_TOKENS + tuple(base_tokens)
        ids: dict[str, int] = {}
        for i, tok in enumerate(tokens):
            if tok in ids:
                raise ValueError(f"duplicate token {tok!r}")
            ids[tok] = i
        self._tokens = tokens
        self._ids = ids
        self.blocks: dict[str, tuple[int, int]] = dict(_blocks or {})

    mask_id = 0
    eos_id = 1
    pad_id = 2
    bos_id = 3

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def token_to_id(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise KeyError(f"unknown token {token!r}") from None

    def id_to_token(self, i: int) -> str:
        return self._tokens[i]

    def encode_tokens(self, tokens: Iterable[str]) -> list[int]:
        return [self.token_to_id(t) for t in tokens]

    def decode_to_tokens(self, ids: Iterable[int]) -> list[str]:
        return [self._tokens[i] for i in ids]

    def block_range(self, label: str) -> tuple[int, int]:
        return self.blocks[label]

    def in_block(self, label: str, i: int) -> bool:
        start, count = self.blocks[label]
        return start <= i < start + count

    # -- serialization ---------------------------------------------------------

    def save(self, path) -> None:
        blocks = ",".join(f"{k}:{s}:{c}" for k, (s, c) in sorted(self.blocks.items()))
        reserved = ",".join(f"{t}:{i}" for i, t in enumerate(RESERVED_TOKENS))
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"#moldlm-vocab v1 reserved={reserved} blocks={blocks}\n")
            for tok in self._tokens:
                f.write(tok + "\n")

    @staticmethod
    def load(path) -> "Vocab":
        with open(path, encoding="utf-8") as f:
            header = f.readline().rstrip("\n")
            if not header.startswith("#moldlm-vocab v1"):
                raise ValueError(f"bad vocab header: {header!r}")
            tokens = tuple(line.rstrip("\n") for line in f if line.rstrip("\n"))
        blocks = {}
        m = re.search(r"blocks=(\S*)", header)
        if m and m.group(1):
            for part in m.group(1).split(","):
                label, start, count = part.rsplit(":", 2)
                blocks[label] = (int(start), int(count))
        if tokens[:4] != RESERVED_TOKENS:
            raise ValueError("reserved tokens corrupted in vocab file")
        return Vocab(_tokens=tokens, _blocks=blocks)


def extend_vocab(base: Vocab, new_tokens: Sequence[str], label: str = "ext") -> Vocab:
    """Append new_tokens as a contiguous id block labeled `label`.

    The new vocab's blocks[label] holds the (start, count) range, which is
    what the embedding-extension step consumes. Duplicates raise.
    """
    new_tokens = tuple(new_tokens)
    for tok in new_tokens:
        if tok in base:
            raise ValueError(f"token {tok!r} already present")
    if len(set(new_tokens)) != len(new_tokens):
        dup = next(t for t in new_tokens if new_tokens.count(t) > 1)
        raise ValueError(f"token {dup!r} duplicated in extension")
    start = len(base)
    blocks = dict(base.blocks)
    blocks[label] = (start, len(new_tokens))
    return Vocab(_tokens=base._tokens + new_tokens, _blocks=blocks)


def tokenize_selfies(text: str, vocab: Vocab) -> list[int]:
    """Map a bracketed dialect string to vocabulary ids.

    Raises TokenizationError for unbalanced brackets and KeyError (naming
    the offender) for tokens outside the registered dialect block.
    """
    tokens = split_tokens(text)
    out = []
    for tok in tokens:
        if tok not in _TOKEN_ACTION or tok not in vocab:
            raise KeyError(f"unknown token {tok!r}")
        out.append(vocab.token_to_id(tok))
    return out


def decode_ids(ids: Sequence[int], vocab: Vocab) -> MolecularGraph:
    """Decode vocabulary ids (which must lie in the dialect block) to a graph."""
    return decode_tokens(vocab.decode_to_tokens(ids))


def encode_to_ids(g: MolecularGraph, vocab: Vocab) -> list[int]:
    return vocab.encode_tokens(encode_graph(g))
