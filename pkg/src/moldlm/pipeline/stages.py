"""The staged training recipe.

Stage 1a pretrains the graph encoder (and a provisional aligner) on the two
auxiliary heads; stage 1b runs text-only diffusion SFT of the backbone;
stage 2 trains the aligner alone, conditioning the same SFT loss on graph
embeddings while encoder and backbone stay byte-frozen; stage 3 jointly
updates encoder, aligner, and backbone with the preference term added.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import numerics as nm
from ..dlm import SEG_QUESTION, SEG_SELFIES
from ..encoder import pretrain_encoder
from ..molgraph import detect_functional_groups, perturb
from ..molpo import implicit_reward, molpo_loss, total_loss
from ..numerics import AdamW, SeedStream, Tensor, no_grad
from ..records import InstructionRecord
from ..selfies import DIALECT_INDEX, split_tokens
from .bundle import ModelBundle

__all__ = ["StageConfig", "StageResult", "run_stage", "STAGES", "TRAINED_PREFIXES"]

STAGES = ("pretrain_encoder", "sft_text", "align", "molpo_joint")

# everything outside a stage's trained prefixes is frozen for that stage
TRAINED_PREFIXES = {
    "pretrain_encoder": ("encoder.", "aligner.", "func_head.", "recon."),
    "sft_text": ("dlm.",),
    "align": ("aligner.",),
    "molpo_joint": ("encoder.", "aligner.", "dlm."),
}


@dataclass
class StageConfig:
    stage: str
    epochs: int
    lr: float
    batch_size: int = 16
    seed: int = 0
    lr_min_ratio: float = 0.1   # cosine decay floor as a fraction of lr
    grad_clip: float = 1.0      # global-norm clip; 0 disables
    verbose: bool = False

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class StageResult:
    stage: str
    losses: dict[str, list[float]] = field(default_factory=dict)
    checkpoint: Path | None = None
    extras: dict = field(default_factory=dict)


def apply_freeze(store, stage: str) -> list[str]:
    """Freeze every parameter the stage does not train; returns frozen names."""
    store.unfreeze_all()
    trained = TRAINED_PREFIXES[stage]
    frozen = [n for n in store.names() if not n.startswith(trained)]
    store.freeze(*frozen)
    return frozen


def run_stage(cfg: StageConfig, bundle: ModelBundle,
              records: list[InstructionRecord], out_dir=None) -> StageResult:
    """Train one stage, enforce its freeze contract, write checkpoint + log."""
    if not records:
        raise ValueError("empty training dataset")
    frozen = apply_freeze(bundle.store, cfg.stage)
    snapshot = {n: bundle.store[n].data.tobytes() for n in frozen}

    if cfg.stage == "pretrain_encoder":
        result = _run_pretrain_encoder(cfg, bundle, records)
    elif cfg.stage == "sft_text":
        result = _run_sft(cfg, bundle, records, with_graph=False)
    elif cfg.stage == "align":
        result = _run_sft(cfg, bundle, records, with_graph=True)
    else:
        result = _run_molpo(cfg, bundle, records)

    for name in frozen:
        if bundle.store[name].data.tobytes() != snapshot[name]:
            raise RuntimeError(f"freeze violation: {name!r} changed during {cfg.stage}")

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt = out_dir / f"{cfg.stage}.ckpt"
        bundle.save(ckpt)
        result.checkpoint = ckpt
        with open(out_dir / f"{cfg.stage}_losses.json", "w") as f:
            json.dump(result.losses, f, indent=1)
    return result


# -- stage 1a: encoder pretraining ------------------------------------------------


def _distinct_graph_data(bundle: ModelBundle, records, limit: int):
    """(graph, group flags, dialect-local ids) per distinct train-split string."""
    seen: dict[str, None] = {}
    for rec in records:
        for text in (rec.selfies_in, rec.target):
            if text.startswith("[") and text not in seen:
                seen[text] = None
    from ..selfies import decode_tokens

    data = []
    for text in list(seen)[:limit]:
        tokens = split_tokens(text)
        g = decode_tokens(tokens)
        flags = detect_functional_groups(g).astype(np.float64)
        s_local = np.array([DIALECT_INDEX[t] for t in tokens], dtype=np.int64)
        data.append((g, flags, s_local))
    return data


def _run_pretrain_encoder(cfg: StageConfig, bundle: ModelBundle, records) -> StageResult:
    stream = SeedStream(cfg.seed).child("pretrain_encoder")
    data = _distinct_graph_data(bundle, records, bundle.cfg.train.encoder_subset)
    if not data:
        raise ValueError("no molecular strings in the training records")
    bundle.encoder.train_mode = True
    opt = AdamW(lr=cfg.lr)
    log = pretrain_encoder(data, bundle.encoder, bundle.aligner, bundle.func_head,
                           bundle.recon, bundle.store, opt, cfg.epochs,
                           stream.child("loop").rng, batch_size=cfg.batch_size,
                           log_every=1 if cfg.verbose else None)
    return StageResult(cfg.stage, losses={"func": log.func_losses,
                                          "recon": log.recon_losses})


# -- stages 1b and 2: diffusion SFT (text-only, then graph-conditioned) -------------


def _task_batches(by_task: dict[str, list[int]], batch_size: int,
                  rng: np.random.Generator) -> list[tuple[str, np.ndarray]]:
    chunks = []
    for task in sorted(by_task):
        idx = np.array(by_task[task])
        rng.shuffle(idx)
        for lo in range(0, len(idx), batch_size):
            chunks.append((task, idx[lo:lo + batch_size]))
    order = rng.permutation(len(chunks))
    return [chunks[i] for i in order]


def _group_by_task(records) -> dict[str, list[int]]:
    by_task: dict[str, list[int]] = {}
    for i, rec in enumerate(records):
        by_task.setdefault(rec.task, []).append(i)
    return by_task


def _cosine_lr(cfg: StageConfig, step: int, total_steps: int) -> float:
    lo = cfg.lr * cfg.lr_min_ratio
    if total_steps <= 1:
        return cfg.lr
    frac = step / (total_steps - 1)
    return lo + 0.5 * (cfg.lr - lo) * (1.0 + np.cos(np.pi * frac))


def _clip_gradients(store, max_norm: float) -> None:
    if max_norm <= 0:
        return
    grads = {}
    for name, p in store.items():
        if not store.is_frozen(name) and p.grad is not None:
            grads[id(p.grad)] = p.grad  # dedupe: buffers may be shared
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale


def _mask_batch(bundle: ModelBundle, x0s: np.ndarray, rng: np.random.Generator,
                t_floor: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    B, R = x0s.shape
    ts = t_floor + (1.0 - t_floor) * rng.random(B)
    masks = rng.random((B, R)) < ts[:, None]
    x_t = np.where(masks, bundle.vocab.mask_id, x0s)
    return x_t, masks, ts


def _masked_nll(bundle: ModelBundle, logits: Tensor, x0s: np.ndarray,
                masks: np.ndarray, ts: np.ndarray) -> Tensor:
    """Batch mean of the per-record (1/t)-weighted masked NLL."""
    B, R, V = logits.shape
    w = masks.astype(logits.dtype) / ts[:, None] / B
    return nm.cross_entropy(logits.reshape(B * R, V), x0s.reshape(-1), w.reshape(-1))


def _run_sft(cfg: StageConfig, bundle: ModelBundle, records, with_graph: bool) -> StageResult:
    stream = SeedStream(cfg.seed).child("align" if with_graph else "sft_text")
    mask_rng = stream.child("masking").rng
    order_rng = stream.child("order").rng

    x0s = [bundle.encode_response(r) for r in records]
    prompts, segs = bundle.prompt_arrays(records)
    by_task = _group_by_task(records)

    h_cache: dict[str, np.ndarray] = {}
    if with_graph:
        # encoder weights are frozen in stage 2: hybrid rows are constants
        bundle.encoder.train_mode = False
        with no_grad():
            for rec in records:
                if rec.selfies_in and rec.selfies_in not in h_cache:
                    g = bundle.graph_of(rec)
                    h_cache[rec.selfies_in] = bundle.encoder.forward(g).rows.data

    def batch_aligned(batch_records) -> Tensor:
        rows = [h_cache[r.selfies_in] for r in batch_records]
        m = max(r.shape[0] for r in rows)
        stackd = np.zeros((len(rows), m, rows[0].shape[1]), dtype=rows[0].dtype)
        real = np.zeros((len(rows), m), dtype=bool)
        for b, r in enumerate(rows):
            stackd[b, :r.shape[0]] = r
            real[b, :r.shape[0]] = True
        return bundle.aligner(Tensor(stackd), key_mask=real)

    opt = AdamW(lr=cfg.lr)
    losses: list[float] = []
    n_batches = sum(int(np.ceil(len(v) / cfg.batch_size)) for v in by_task.values())
    total_steps = cfg.epochs * n_batches
    step = 0
    for epoch in range(cfg.epochs):
        batches = _task_batches(by_task, cfg.batch_size, order_rng)
        total = 0.0
        count = 0
        for task, idx in batches:
            batch_records = [records[i] for i in idx]
            x0 = np.stack([x0s[i] for i in idx])
            x_t, masks, ts = _mask_batch(bundle, x0, mask_rng, bundle.cfg.train.t_floor)
            h_stack = None
            if with_graph and batch_records[0].selfies_in:
                h_stack = batch_aligned(batch_records)
            bundle.store.zero_grad()
            logits = bundle.dlm.predict_batch(x_t, prompts[idx], segs[idx],
                                              h_aligned=h_stack,
                                              pad_id=bundle.vocab.pad_id)
            loss = _masked_nll(bundle, logits, x0, masks, ts)
            nm.backward(loss)
            _clip_gradients(bundle.store, cfg.grad_clip)
            opt.lr = _cosine_lr(cfg, step, total_steps)
            opt.step(bundle.store)
            step += 1
            total += loss.item() * len(idx)
            count += len(idx)
        losses.append(total / count)
        if cfg.verbose:
            print(f"[{cfg.stage}] epoch {epoch + 1}/{cfg.epochs}: loss {losses[-1]:.4f}")
    return StageResult(cfg.stage, losses={"sft": losses})


# -- stage 3: joint multimodal training with the preference term ---------------------


def _rewards_batch(bundle: ModelBundle, logits: Tensor, x0: np.ndarray,
                   masks: np.ndarray) -> Tensor:
    """Per-record implicit rewards (B,): the batched form of implicit_reward."""
    B, R, V = logits.shape
    lp = nm.log_softmax(logits, axis=-1)
    picked = lp[np.arange(B)[:, None], np.arange(R)[None, :], x0]
    n_mask = masks.sum(axis=1)
    w = masks.astype(logits.dtype) * (bundle.molpo_cfg.beta / n_mask[:, None])
    return (picked * Tensor(w)).sum(axis=1)


def _run_molpo(cfg: StageConfig, bundle: ModelBundle, records) -> StageResult:
    stream = SeedStream(cfg.seed).child("molpo_joint")
    mask_rng = stream.child("masking").rng
    order_rng = stream.child("order").rng
    ids_rng = stream.child("identifiers").rng

    x0s = [bundle.encode_response(r) for r in records]
    prompts, segs = bundle.prompt_arrays(records)
    by_task = _group_by_task(records)
    graphs = [bundle.graph_of(r) for r in records]
    perturb_rng = stream.child("perturb").rng
    rejected = []
    for g in graphs:
        if g is None:
            rejected.append(None)
        else:
            res = perturb(g, perturb_rng)
            rejected.append(None if res.degenerate else res.graph)

    bundle.encoder.train_mode = True
    opt = AdamW(lr=cfg.lr)
    sft_losses: list[float] = []
    molpo_losses: list[float] = []
    margins: list[float] = []
    n_batches = sum(int(np.ceil(len(v) / cfg.batch_size)) for v in by_task.values())
    total_steps = cfg.epochs * n_batches
    step = 0
    for epoch in range(cfg.epochs):
        batches = _task_batches(by_task, cfg.batch_size, order_rng)
        s_total = m_total = margin_total = 0.0
        s_count = m_count = 0
        for task, idx in batches:
            x0 = np.stack([x0s[i] for i in idx])
            x_t, masks, ts = _mask_batch(bundle, x0, mask_rng, bundle.cfg.train.t_floor)
            bundle.store.zero_grad()

            has_graph = graphs[idx[0]] is not None
            h_w = None
            if has_graph:
                h_w = bundle.align_graphs([graphs[i] for i in idx], rng=ids_rng)
            logits_w = bundle.dlm.predict_batch(x_t, prompts[idx], segs[idx],
                                                h_aligned=h_w, pad_id=bundle.vocab.pad_id)
            l_sft = _masked_nll(bundle, logits_w, x0, masks, ts)

            pair_rows = [b for b, i in enumerate(idx)
                         if rejected[i] is not None and masks[b].any()]
            if has_graph and pair_rows:
                h_l = bundle.align_graphs([rejected[idx[b]] for b in pair_rows], rng=ids_rng)
                logits_l = bundle.dlm.predict_batch(
                    x_t[pair_rows], prompts[idx[pair_rows]], segs[idx[pair_rows]],
                    h_aligned=h_l, pad_id=bundle.vocab.pad_id)
                r_w = _rewards_batch(bundle, logits_w[pair_rows], x0[pair_rows],
                                     masks[pair_rows])
                r_l = _rewards_batch(bundle, logits_l, x0[pair_rows], masks[pair_rows])
                margin_total += float((r_w.data - r_l.data).sum())
                gamma = bundle.molpo_cfg.gamma.get(task, 0.0)
                beta = bundle.molpo_cfg.beta
                clip = r_w.abs() * bundle.molpo_cfg.lambda_clip
                margin = nm.minimum(r_w - r_l, clip)
                l_molpo = nm.softplus((margin - gamma) * (-beta)).mean()
                m_total += l_molpo.item() * len(pair_rows)
                m_count += len(pair_rows)
                loss = total_loss(l_sft, l_molpo, bundle.molpo_cfg)
            else:
                loss = l_sft
            nm.backward(loss)
            _clip_gradients(bundle.store, cfg.grad_clip)
            opt.lr = _cosine_lr(cfg, step, total_steps)
            opt.step(bundle.store)
            step += 1
            s_total += l_sft.item() * len(idx)
            s_count += len(idx)
        sft_losses.append(s_total / s_count)
        molpo_losses.append(m_total / m_count if m_count else float("nan"))
        margins.append(margin_total / m_count if m_count else float("nan"))
        if cfg.verbose:
            print(f"[molpo_joint] epoch {epoch + 1}/{cfg.epochs}: "
                  f"sft {sft_losses[-1]:.4f} molpo {molpo_losses[-1]:.4f} "
                  f"margin {margins[-1]:+.4f}")
    return StageResult(cfg.stage,
                       losses={"sft": sft_losses, "molpo": molpo_losses},
                       extras={"reward_margin": margins})
