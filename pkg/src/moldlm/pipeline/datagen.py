"""Synthetic instruction dataset generator.

Each record is derived from a randomly sampled molecular graph via the toy
oracles: captions and property answers come from graph facts, reaction pairs
from the deterministic oxidation rule. Splits are disjoint at the fingerprint
level: once a graph (or its reaction partner) is claimed by a split, no other
split may use it.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

from ..molgraph import (
    FUNCTIONAL_GROUP_KEYS,
    MolecularGraph,
    detect_functional_groups,
    fingerprint,
    random_graph,
    toy_property,
    toy_reaction_forward,
)
from ..records import SPLITS, InstructionRecord, write_records
from ..selfies import InexpressibleGraphError, encode_graph, render_tokens

__all__ = ["QUESTIONS", "caption_for", "gen_dataset", "DEFAULT_SIZES"]

QUESTIONS = {
    "caption": "Describe this molecule in one sentence.",
    "generate": "Give a molecule matching this description: {caption}",
    "prop_reg": "What is the sum of distances between all atom pairs? "
                "Answer with a decimal number.",
    "prop_cls": "Does this molecule contain a ring? Answer True or False.",
    "forward": "Predict the product when this molecule is oxidized.",
    "retro": "Give the reactant that gives this product upon oxidation.",
}

_GROUP_WORDS = {
    "carbonyl": "carbonyl",
    "hydroxyl_like": "hydroxyl",
    "amine": "amine",
    "nitrile": "nitrile",
    "sulfur": "sulfur",
    "halogen_like": "halogen",
    "carboxyl": "carboxyl",
}

DEFAULT_SIZES: dict[str, tuple[int, int, int]] = {
    "caption": (2000, 100, 200),
    "generate": (1000, 50, 100),
    "prop_reg": (1000, 50, 100),
    "prop_cls": (1000, 50, 100),
    "forward": (2000, 100, 200),
    "retro": (1000, 50, 100),
}


def caption_for(g: MolecularGraph) -> str:
    """Deterministic one-sentence caption from graph facts."""
    flags = detect_functional_groups(g)
    ring = "a ring" if flags[FUNCTIONAL_GROUP_KEYS.index("ring")] else "no ring"
    names = [word for key, word in _GROUP_WORDS.items()
             if flags[FUNCTIONAL_GROUP_KEYS.index(key)]]
    if names:
        groups = f"{len(names)} groups: " + ", ".join(names)
    else:
        groups = "0 groups"
    return f"This molecule has {g.n_atoms} heavy atoms, {ring}, and {groups}."


def _selfies_text(g: MolecularGraph) -> str:
    return render_tokens(encode_graph(g))


def _make_reactant(g: MolecularGraph, rng: np.random.Generator) -> MolecularGraph | None:
    """Attach a terminal O to a spare-valence C so the oxidation rule fires.

    Random graphs almost never carry a reaction site, so reaction records are
    built constructively. Returns None when the base graph cannot host one.
    """
    if any(o == 2 and {g.elements[u], g.elements[v]} == {"C", "O"} for u, v, o in g.bonds):
        return None  # existing carbonyl: the rule would be a no-op
    spots = [i for i, el in enumerate(g.elements)
             if el == "C" and g.remaining_valence(i) >= 2]
    if not spots:
        return None
    c = int(spots[rng.integers(len(spots))])
    reactant = MolecularGraph(g.elements + ("O",), g.bonds + ((c, g.n_atoms, 1),))
    product = toy_reaction_forward(reactant)
    if product is reactant:
        return None
    try:
        encode_graph(reactant)
        encode_graph(product)
    except InexpressibleGraphError:
        return None
    return reactant


def _build_record(task: str, g: MolecularGraph, split: str,
                  rng: np.random.Generator
                  ) -> tuple[InstructionRecord, list[MolecularGraph]] | None:
    """Record plus every graph whose fingerprint the record touches.

    Returns None when the sampled graph cannot serve the task (e.g. no
    oxidation site for reaction tasks).
    """
    if task == "caption":
        return InstructionRecord(task, QUESTIONS[task], _selfies_text(g),
                                 caption_for(g), split), [g]
    if task == "generate":
        q = QUESTIONS[task].format(caption=caption_for(g))
        return InstructionRecord(task, q, "", _selfies_text(g), split), [g]
    if task == "prop_reg":
        value = toy_property(g, "wiener_index")
        return InstructionRecord(task, QUESTIONS[task], _selfies_text(g),
                                 f"{value:.2f}", split), [g]
    if task == "prop_cls":
        value = toy_property(g, "has_ring")
        return InstructionRecord(task, QUESTIONS[task], _selfies_text(g),
                                 "True" if value else "False", split), [g]
    if task in ("forward", "retro"):
        reactant = _make_reactant(g, rng)
        if reactant is None:
            return None
        product = toy_reaction_forward(reactant)
        if task == "forward":
            rec = InstructionRecord(task, QUESTIONS[task], _selfies_text(reactant),
                                    _selfies_text(product), split)
        else:
            rec = InstructionRecord(task, QUESTIONS[task], _selfies_text(product),
                                    _selfies_text(reactant), split)
        return rec, [reactant, product]
    raise ValueError(f"unknown task {task!r}")


def gen_dataset(rng, sizes: Mapping[str, tuple[int, int, int]], out_dir,
                max_atoms: int = 8, max_tries_factor: int = 400) -> dict[str, Path]:
    """Emit train/val/test JSONL files; returns the per-split paths.

    Every path starts with one schema header line. Graphs are claimed by the
    first split that uses them; records whose graphs straddle splits are
    discarded and resampled.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    claims: dict[bytes, str] = {}
    per_split: dict[str, list[InstructionRecord]] = {s: [] for s in SPLITS}

    for task in sorted(sizes):
        counts = sizes[task]
        for split, need in zip(SPLITS, counts):
            made = 0
            tries = 0
            budget = max(1, need) * max_tries_factor
            while made < need:
                tries += 1
                if tries > budget:
                    raise RuntimeError(
                        f"could not fill {task}/{split}: {made}/{need} after {tries} tries")
                base_atoms = max_atoms - 1 if task in ("forward", "retro") else max_atoms
                g = random_graph(rng, max(1, base_atoms))
                built = _build_record(task, g, split, rng)
                if built is None:
                    continue
                rec, graphs = built
                keys = [fingerprint(gr).tobytes() for gr in graphs]
                owners = {claims.get(k) for k in keys}
                owners.discard(None)
                if owners - {split}:
                    continue  # graph already belongs to another split
                for k in keys:
                    claims[k] = split
                per_split[split].append(rec)
                made += 1

    paths = {}
    for split in SPLITS:
        path = out_dir / f"{split}.jsonl"
        header = json.dumps({"schema": "moldlm/instruction-v1", "split": split,
                             "count": len(per_split[split])})
        with open(path, "w", encoding="utf-8") as f:
            f.write(header + "\n")
            for rec in per_split[split]:
                f.write(rec.to_json() + "\n")
        paths[split] = path
    return paths
