"""Evaluation: task-routed sampling plus the metric zoo.

Molecule outputs score exact match on canonical token renderings and mean
fingerprint Tanimoto (reported as fp-sim); captions score unigram-F1
(ROUGE-1); regression answers parse to decimals for RMSE/MAE; classification
scores accuracy plus a rank-based AUROC over the model's probability of the
"True" token under a single full-mask prediction.
"""

from __future__ import annotations

import csv
import re
import time
from collections import Counter
from pathlib import Path

import numpy as np

from ..molgraph import MolecularGraph, fingerprint, tanimoto
from ..records import InstructionRecord
from ..sampler import Conditioning, SamplerConfig, sample_block, sample_pure, truncate_eos
from ..selfies import (
    InexpressibleGraphError,
    decode_tokens,
    encode_graph,
    render_tokens,
    split_tokens,
)
from ..text import render_text
from ..numerics import no_grad
from .bundle import MOLECULE_TASKS, ModelBundle
from .vocab import SELFIES_BLOCK

__all__ = ["rouge1", "auroc", "evaluate", "metrics_rows", "write_metrics_csv",
           "canonical_rendering"]


def rouge1(candidate: str, reference: str) -> float:
    """Unigram F1 with clipped counts over whitespace tokens."""
    cand = candidate.split()
    ref = reference.split()
    if not cand or not ref:
        return 1.0 if cand == ref else 0.0
    cc, rc = Counter(cand), Counter(ref)
    overlap = sum(min(n, rc[tok]) for tok, n in cc.items())
    if overlap == 0:
        return 0.0
    p = overlap / len(cand)
    r = overlap / len(ref)
    return 2 * p * r / (p + r)


def auroc(scores, labels) -> float:
    """Probability a random positive outscores a random negative (ties=0.5)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs both classes present")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0  # average rank, 1-based
        i = j + 1
    rank_sum = ranks[labels].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def canonical_rendering(ids, vocab) -> tuple[str, MolecularGraph]:
    """Decode-then-reserialize: the canonical string for exact match.

    Non-dialect ids are dropped as noise before decoding. If the decoded
    graph is not expressible under the canonical serialization, the filtered
    raw tokens stand in (exact match will then almost surely miss).
    """
    start, count = vocab.block_range(SELFIES_BLOCK)
    tokens = [vocab.id_to_token(i) for i in ids if start <= i < start + count]
    g = decode_tokens(tokens)
    if g.n_atoms == 0:
        return "", g
    try:
        return render_tokens(encode_graph(g)), g
    except InexpressibleGraphError:
        return render_tokens(tokens), g


def _route_config(task: str, base: SamplerConfig, gen_len: int) -> SamplerConfig:
    """Molecule outputs decode with pure diffusion, text/number ones blockwise."""
    strategy = "pure" if task in MOLECULE_TASKS else "block"
    return SamplerConfig(steps=base.steps, gen_len=gen_len, strategy=strategy,
                         block_len=min(base.block_len, gen_len),
                         temperature=base.temperature, seed=base.seed)


def _sample(bundle: ModelBundle, cond: Conditioning, cfg: SamplerConfig):
    fn = sample_pure if cfg.strategy == "pure" else sample_block
    return fn(bundle.predictor(), cond, cfg, bundle.vocab)


def _parse_decimal(text: str) -> float:
    m = re.search(r"-?\d+(?:\.\d+)?", text)
    return float(m.group()) if m else 0.0


def evaluate(bundle: ModelBundle, records: list[InstructionRecord], task: str,
             sampler_cfg: SamplerConfig | None = None,
             trace_dir=None) -> dict[str, float]:
    """Run the task's sampler over the records and compute its metrics."""
    records = [r for r in records if r.task == task]
    if not records:
        raise ValueError(f"no records for task {task!r}")
    base = sampler_cfg if sampler_cfg is not None else SamplerConfig(
        steps=bundle.cfg.sampler.steps, block_len=bundle.cfg.sampler.block_len,
        temperature=bundle.cfg.sampler.temperature)
    cfg = _route_config(task, base, bundle.response_len(task))
    bundle.encoder.train_mode = False

    exacts, sims, valids = [], [], []
    rouges = []
    reg_err = []
    cls_hits, cls_scores, cls_labels = [], [], []
    t0 = time.perf_counter()
    for i, rec in enumerate(records):
        q = bundle.encode_question(rec)
        s = bundle.encode_selfies_in(rec)
        g = bundle.graph_of(rec)
        h = bundle.align_graph(g) if g is not None else None
        cond = Conditioning(q=q, s=s, h_aligned=h)
        tokens, trace = _sample(bundle, cond, cfg)
        if trace_dir is not None:
            Path(trace_dir).mkdir(parents=True, exist_ok=True)
            trace.dump(Path(trace_dir) / f"{task}_{i:05d}.jsonl")
        out = truncate_eos(tokens, bundle.vocab.eos_id)

        if task in MOLECULE_TASKS:
            pred_str, pred_graph = canonical_rendering(out, bundle.vocab)
            tgt_ids = bundle.vocab.encode_tokens(split_tokens(rec.target))
            tgt_str, tgt_graph = canonical_rendering(tgt_ids, bundle.vocab)
            exacts.append(float(pred_str == tgt_str))
            sims.append(tanimoto(fingerprint(pred_graph), fingerprint(tgt_graph)))
            valids.append(1.0)  # decode is total; kept as a regression tripwire
        elif task == "caption":
            rouges.append(rouge1(render_text(out, bundle.vocab), rec.target))
        elif task == "prop_reg":
            pred = _parse_decimal(render_text(out, bundle.vocab))
            reg_err.append(pred - float(rec.target))
        elif task == "prop_cls":
            text = render_text(out, bundle.vocab)
            cls_hits.append(float(text.strip() == rec.target))
            cls_scores.append(_true_probability(bundle, cond, cfg.gen_len))
            cls_labels.append(rec.target == "True")
    wall = time.perf_counter() - t0

    out: dict[str, float] = {"n": float(len(records)), "seconds": wall}
    if task in MOLECULE_TASKS:
        out["exact"] = float(np.mean(exacts))
        out["fp_sim"] = float(np.mean(sims))
        out["validity"] = float(np.mean(valids))
    elif task == "caption":
        out["rouge1"] = float(np.mean(rouges))
    elif task == "prop_reg":
        err = np.asarray(reg_err)
        out["rmse"] = float(np.sqrt(np.mean(err ** 2)))
        out["mae"] = float(np.mean(np.abs(err)))
    elif task == "prop_cls":
        out["accuracy"] = float(np.mean(cls_hits))
        out["auroc"] = auroc(cls_scores, cls_labels)
    return out


def _true_probability(bundle: ModelBundle, cond: Conditioning, gen_len: int) -> float:
    """P("True") at the answer position under one full-mask prediction."""
    x_t = np.full(gen_len, bundle.vocab.mask_id, dtype=np.int64)
    with no_grad():
        logits = bundle.predictor().predict(x_t, cond.q, cond.s, cond.h_aligned).data[0]
    z = logits - logits.max()
    probs = np.exp(z)
    probs /= probs.sum()
    return float(probs[bundle.vocab.token_to_id("True")])


def metrics_rows(results: dict[str, dict[str, float]]) -> list[tuple[str, str, float, int]]:
    rows = []
    for task in sorted(results):
        res = results[task]
        n = int(res.get("n", 0))
        for metric, value in sorted(res.items()):
            if metric in ("n", "seconds"):
                continue
            rows.append((task, metric, value, n))
    return rows


def write_metrics_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["task", "metric", "value", "n"])
        for task, metric, value, n in rows:
            writer.writerow([task, metric, f"{value:.6f}", n])
