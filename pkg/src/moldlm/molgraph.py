"""Molecular graphs and chemistry-adjacent utilities.

Heavy-atom graphs over a six-element alphabet with fixed valence caps.
Includes functional-group keys, a 167-bit path fingerprint, Tanimoto
similarity, toy property/reaction oracles, and the structure perturbation
used to build rejected preference pairs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

__all__ = [
    "ELEMENTS",
    "VALENCE",
    "MolecularGraph",
    "FUNCTIONAL_GROUP_KEYS",
    "detect_functional_groups",
    "fingerprint",
    "FINGERPRINT_BITS",
    "tanimoto",
    "PerturbResult",
    "perturb",
    "toy_property",
    "toy_reaction_forward",
    "random_graph",
]

ELEMENTS = ("C", "N", "O", "F", "S", "P")
VALENCE = {"C": 4, "N": 3, "O": 2, "F": 1, "S": 2, "P": 3}

FINGERPRINT_BITS = 167


@dataclass(frozen=True)
class MolecularGraph:
    """Undirected heavy-atom graph: elements plus (u, v, order) bonds.

    Invariants enforced at construction: no self-loops, at most one bond per
    pair, bond orders in {1,2,3}, and per-atom bond-order sums within the
    element's valence cap.
    """

    elements: tuple[str, ...] = ()
    bonds: tuple[tuple[int, int, int], ...] = ()

    def __post_init__(self):
        elements = tuple(self.elements)
        for el in elements:
            if el not in VALENCE:
                raise ValueError(f"unknown element {el!r}")
        n = len(elements)
        norm = []
        seen_pairs = set()
        sums = [0] * n
        for u, v, order in self.bonds:
            u, v, order = int(u), int(v), int(order)
            if u == v:
                raise ValueError(f"self-loop on atom {u}")
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"bond ({u},{v}) references a missing atom")
            if order not in (1, 2, 3):
                raise ValueError(f"bond order {order} not in 1..3")
            if u > v:
                u, v = v, u
            if (u, v) in seen_pairs:
                raise ValueError(f"duplicate bond ({u},{v})")
            seen_pairs.add((u, v))
            sums[u] += order
            sums[v] += order
            norm.append((u, v, order))
        for i, s in enumerate(sums):
            if s > VALENCE[elements[i]]:
                raise ValueError(
                    f"atom {i} ({elements[i]}) exceeds valence: {s} > {VALENCE[elements[i]]}")
        object.__setattr__(self, "elements", elements)
        object.__setattr__(self, "bonds", tuple(sorted(norm)))

    # -- basic accessors -----------------------------------------------------

    @property
    def n_atoms(self) -> int:
        return len(self.elements)

    @property
    def n_bonds(self) -> int:
        return len(self.bonds)

    def neighbor_map(self) -> dict[int, list[tuple[int, int]]]:
        nbrs: dict[int, list[tuple[int, int]]] = {i: [] for i in range(self.n_atoms)}
        for u, v, order in self.bonds:
            nbrs[u].append((v, order))
            nbrs[v].append((u, order))
        return nbrs

    def order_sum(self, i: int) -> int:
        return sum(o for u, v, o in self.bonds if u == i or v == i)

    def remaining_valence(self, i: int) -> int:
        return VALENCE[self.elements[i]] - self.order_sum(i)

    def is_connected(self) -> bool:
        if self.n_atoms <= 1:
            return True
        return len(_component_of(self, 0)) == self.n_atoms

    def has_cycle(self) -> bool:
        seen: set[int] = set()
        comps = 0
        for start in range(self.n_atoms):
            if start in seen:
                continue
            comps += 1
            seen |= _component_of(self, start)
        return self.n_bonds > self.n_atoms - comps

    # -- serialization ----------------------------------------------------------

    def to_json(self) -> str:
        return json.dumps({
            "atoms": [{"el": el} for el in self.elements],
            "bonds": [[u, v, o] for u, v, o in self.bonds],
        })

    @staticmethod
    def from_json(text: str) -> "MolecularGraph":
        obj = json.loads(text)
        return MolecularGraph(
            elements=tuple(a["el"] for a in obj["atoms"]),
            bonds=tuple((b[0], b[1], b[2]) for b in obj["bonds"]),
        )


def _component_of(g: MolecularGraph, start: int) -> set[int]:
    nbrs = g.neighbor_map()
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for v, _ in nbrs[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return seen


# -- functional groups -------------------------------------------------------

FUNCTIONAL_GROUP_KEYS = (
    "carbonyl",        # C=O
    "hydroxyl_like",   # terminal O single-bonded to C
    "amine",           # N with only single bonds (isolated N counts)
    "nitrile",         # C#N
    "sulfur",          # any S
    "ring",            # any cycle
    "halogen_like",    # any F
    "carboxyl",        # C(=O)-O
)

N_FUNCTIONAL_GROUPS = len(FUNCTIONAL_GROUP_KEYS)


def detect_functional_groups(g: MolecularGraph) -> np.ndarray:
    """Boolean flags, one per key in FUNCTIONAL_GROUP_KEYS."""
    flags = np.zeros(N_FUNCTIONAL_GROUPS, dtype=bool)
    nbrs = g.neighbor_map()

    def pair_is(u, v, a, b):
        return {g.elements[u], g.elements[v]} == {a, b} or (a == b == g.elements[u] == g.elements[v])

    for u, v, order in g.bonds:
        if order == 2 and pair_is(u, v, "C", "O"):
            flags[0] = True
        if order == 3 and pair_is(u, v, "C", "N"):
            flags[3] = True
    for i, el in enumerate(g.elements):
        if el == "O" and len(nbrs[i]) == 1:
            j, order = nbrs[i][0]
            if order == 1 and g.elements[j] == "C":
                flags[1] = True
        if el == "N" and all(order == 1 for _, order in nbrs[i]):
            flags[2] = True
        if el == "S":
            flags[4] = True
        if el == "F":
            flags[6] = True
        if el == "C":
            has_double_o = any(order == 2 and g.elements[j] == "O" for j, order in nbrs[i])
            has_single_o = any(order == 1 and g.elements[j] == "O" for j, order in nbrs[i])
            if has_double_o and has_single_o:
                flags[7] = True
    flags[5] = g.has_cycle()
    return flags


# -- fingerprint ----------------------------------------------------------------

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = (1 << 64) - 1


def _fnv1a(text: str) -> int:
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & _U64
    return h


def fingerprint(g: MolecularGraph) -> np.ndarray:
    """167-bit boolean path fingerprint.

    Every simple path of 0..4 bonds is rendered as an element/bond-order
    string (e.g. "C2O1C"), canonicalized to the lexicographically smaller
    reading direction, and FNV-1a-hashed onto one of 167 bits. Deterministic
    and invariant under atom relabeling.
    """
    bits = np.zeros(FINGERPRINT_BITS, dtype=bool)
    nbrs = g.neighbor_map()

    def visit(path_atoms: list[int], label_parts: list[str], depth: int):
        label = "".join(label_parts)
        canon = min(label, label[::-1])
        bits[_fnv1a(canon) % FINGERPRINT_BITS] = True
        if depth == 4:
            return
        u = path_atoms[-1]
        for v, order in nbrs[u]:
            if v in path_atoms:
                continue
            visit(path_atoms + [v], label_parts + [str(order), g.elements[v]], depth + 1)

    for i in range(g.n_atoms):
        visit([i], [g.elements[i]], 0)
    return bits


def tanimoto(a: np.ndarray, b: np.ndarray) -> float:
    """|a AND b| / |a OR b|; defined as 1.0 when both vectors are empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"fingerprint width mismatch: {a.shape} vs {b.shape}")
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum()) / union


# -- structure perturbation -------------------------------------------------------


class PerturbResult(NamedTuple):
    graph: MolecularGraph
    degenerate: bool


def _replace_element(g: MolecularGraph, i: int, el: str) -> MolecularGraph | None:
    if g.order_sum(i) > VALENCE[el]:
        return None
    elements = list(g.elements)
    elements[i] = el
    return MolecularGraph(tuple(elements), g.bonds)


def _set_bond_order(g: MolecularGraph, u: int, v: int, order: int) -> MolecularGraph:
    bonds = [(a, b, order if {a, b} == {u, v} else o) for a, b, o in g.bonds]
    return MolecularGraph(g.elements, tuple(bonds))


def _drop_bond(g: MolecularGraph, u: int, v: int) -> MolecularGraph:
    bonds = [(a, b, o) for a, b, o in g.bonds if {a, b} != {u, v}]
    return MolecularGraph(g.elements, tuple(bonds))


def _cycle_edges(g: MolecularGraph) -> list[tuple[int, int]]:
    out = []
    for u, v, _ in g.bonds:
        reduced = _drop_bond(g, u, v)
        if v in _component_of(reduced, u):
            out.append((u, v))
    return out


def _group_rewrites(g: MolecularGraph) -> list[tuple[str, MolecularGraph | None]]:
    """All candidate single-occurrence rewrites from the substitution table."""
    nbrs = g.neighbor_map()
    out: list[tuple[str, MolecularGraph | None]] = []
    for u, v, order in g.bonds:
        eu, ev = g.elements[u], g.elements[v]
        if order == 2 and {eu, ev} == {"C", "O"}:
            o_atom = u if eu == "O" else v
            stripped = _set_bond_order(g, u, v, 1)
            out.append(("carbonyl", _replace_element(stripped, o_atom, "C")))
        if order == 3 and {eu, ev} == {"C", "N"}:
            out.append(("nitrile", _set_bond_order(g, u, v, 1)))
    for i, el in enumerate(g.elements):
        if el == "O" and len(nbrs[i]) == 1 and nbrs[i][0][1] == 1 \
                and g.elements[nbrs[i][0][0]] == "C":
            out.append(("hydroxyl_like", _replace_element(g, i, "F")))
        if el == "N" and all(order == 1 for _, order in nbrs[i]):
            swapped = _replace_element(g, i, "O")
            if swapped is None:
                swapped = _replace_element(g, i, "P")
            out.append(("amine", swapped))
        if el == "S":
            out.append(("sulfur", _replace_element(g, i, "O")))
        if el == "F":
            out.append(("halogen_like", _replace_element(g, i, "C")))
        if el == "C":
            single_os = [j for j, order in nbrs[i] if order == 1 and g.elements[j] == "O"]
            has_double_o = any(order == 2 and g.elements[j] == "O" for j, order in nbrs[i])
            if has_double_o and single_os:
                out.append(("carboxyl", _replace_element(g, single_os[0], "N")))
    for u, v in _cycle_edges(g):
        out.append(("ring", _drop_bond(g, u, v)))
    return [(k, cand) for k, cand in out if cand is not None]


def _rewire_candidates(g: MolecularGraph, rng: np.random.Generator) -> MolecularGraph | None:
    """Move one endpoint of a random bond to a random compatible atom."""
    if not g.bonds:
        return None
    bond_order = rng.permutation(len(g.bonds))
    for bi in bond_order:
        u, v, order = g.bonds[bi]
        keep, move = (u, v) if rng.random() < 0.5 else (v, u)
        bonded_to_keep = {a if b == keep else b for a, b, _ in g.bonds if keep in (a, b)}
        options = [w for w in range(g.n_atoms)
                   if w not in (keep, move) and w not in bonded_to_keep
                   and g.remaining_valence(w) >= order]
        if not options:
            continue
        w = int(options[rng.integers(len(options))])
        stripped = _drop_bond(g, u, v)
        return MolecularGraph(stripped.elements, stripped.bonds + ((keep, w, order),))
    return None


def perturb(g: MolecularGraph, rng) -> PerturbResult:
    """Rewrite one functional-group occurrence (or rewire an edge) so the
    result's fingerprint differs from the input's.

    Falls back to the degenerate flag after 8 failed attempts; degenerate
    pairs should be dropped from preference batches.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    fp_orig = fingerprint(g)
    rewrites = _group_rewrites(g)
    for _ in range(8):
        if rewrites:
            _, candidate = rewrites[rng.integers(len(rewrites))]
        else:
            candidate = _rewire_candidates(g, rng)
        if candidate is None:
            continue
        if not np.array_equal(fingerprint(candidate), fp_orig):
            return PerturbResult(candidate, False)
    return PerturbResult(g, True)


# -- toy oracles ----------------------------------------------------------------

PROPERTY_KINDS = ("heavy_atom_count", "has_ring", "has_nitrogen", "wiener_index")


def toy_property(g: MolecularGraph, kind: str):
    if kind == "heavy_atom_count":
        return g.n_atoms
    if kind == "has_ring":
        return g.has_cycle()
    if kind == "has_nitrogen":
        return "N" in g.elements
    if kind == "wiener_index":
        if not g.is_connected():
            raise ValueError("wiener_index requires a connected graph")
        nbrs = g.neighbor_map()
        total = 0
        for src in range(g.n_atoms):
            dist = {src: 0}
            frontier = [src]
            while frontier:
                nxt = []
                for u in frontier:
                    for v, _ in nbrs[u]:
                        if v not in dist:
                            dist[v] = dist[u] + 1
                            nxt.append(v)
                frontier = nxt
            total += sum(d for node, d in dist.items() if node > src)
        return total
    raise ValueError(f"unknown property kind {kind!r}")


def toy_reaction_forward(g: MolecularGraph) -> MolecularGraph:
    """Deterministic toy oxidation.

    If the graph holds no carbonyl yet, the first (lowest atom index)
    terminal O single-bonded to a C with spare valence becomes C=O.
    Idempotent: once a carbonyl exists the graph is returned unchanged.
    """
    if any(o == 2 and {g.elements[u], g.elements[v]} == {"C", "O"} for u, v, o in g.bonds):
        return g
    nbrs = g.neighbor_map()
    for i, el in enumerate(g.elements):
        if el != "O" or len(nbrs[i]) != 1:
            continue
        j, order = nbrs[i][0]
        if order == 1 and g.elements[j] == "C" and g.remaining_valence(j) >= 1:
            return _set_bond_order(g, i, j, 2)
    return g


def random_graph(rng, max_atoms: int) -> MolecularGraph:
    """Sample a random dialect token string and decode it.

    Guarantees a valence-valid connected graph with 1..max_atoms atoms that
    the codec can re-encode (resampling until decode+encode both succeed).
    """
    from . import selfies  # local import: selfies depends on this module

    if max_atoms < 1:
        raise ValueError("max_atoms must be >= 1")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    alphabet = selfies.DIALECT_TOKENS
    while True:
        length = int(rng.integers(1, 2 * max_atoms + 3))
        tokens = [alphabet[i] for i in rng.integers(len(alphabet), size=length)]
        g = selfies.decode_tokens(tokens)
        if not 1 <= g.n_atoms <= max_atoms:
            continue
        try:
            selfies.encode_graph(g)
        except selfies.InexpressibleGraphError:
            continue
        return g
