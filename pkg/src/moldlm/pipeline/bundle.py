"""ModelBundle: every component wired to one parameter store, plus the
record-to-array plumbing shared by training and evaluation."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .. import numerics as nm
from ..aligner import AlignerConfig, QFormer
from ..dlm import DiffusionLM, DlmConfig, extend_embeddings
from ..encoder import EncoderConfig, FuncGroupHead, HybridGraphEncoder, ReconDecoder
from ..molgraph import MolecularGraph
from ..molpo import MolpoConfig
from ..numerics import ParameterStore, SeedStream, Tensor
from ..records import InstructionRecord
from ..selfies import decode_tokens, split_tokens, tokenize_selfies
from ..text import tokenize_text
from .config import Config
from .vocab import SELFIES_BLOCK, build_vocab

__all__ = ["ModelBundle"]

MOLECULE_TASKS = ("generate", "forward", "retro")


class ModelBundle:
    def __init__(self, cfg: Config, dtype=None):
        self.cfg = cfg
        self.vocab = build_vocab()
        dt = dtype if dtype is not None else cfg.train_dtype()
        self.dtype = dt
        self.store = ParameterStore()
        stream = SeedStream(cfg.run.seed).child("init")

        self.encoder_cfg = EncoderConfig(
            d_g=cfg.encoder.d_g, gine_layers=cfg.encoder.gine_layers,
            gt_layers=cfg.encoder.gt_layers, gt_heads=cfg.encoder.gt_heads, dtype=dt)
        self.encoder = HybridGraphEncoder(self.store, self.encoder_cfg,
                                          stream.child("encoder").rng)

        self.aligner_cfg = AlignerConfig(
            n_queries=cfg.aligner.n_queries, d_model=cfg.dlm.d_model,
            d_in=cfg.encoder.d_g, n_heads=cfg.aligner.n_heads,
            depth=cfg.aligner.depth, dtype=dt)
        self.aligner = QFormer(self.store, self.aligner_cfg, stream.child("aligner").rng)

        self.func_head = FuncGroupHead(self.store, cfg.dlm.d_model,
                                       stream.child("func_head").rng, dtype=dt)
        self.recon = ReconDecoder(self.store, cfg.dlm.d_model, stream.child("recon").rng,
                                  d_model=cfg.encoder.d_g, dtype=dt)

        self.dlm_cfg = DlmConfig(
            vocab_size=len(self.vocab), d_model=cfg.dlm.d_model,
            n_layers=cfg.dlm.n_layers, n_heads=cfg.dlm.n_heads,
            d_ff=cfg.dlm.d_ff, max_len=cfg.dlm.max_len, dtype=dt)
        self.dlm = DiffusionLM(self.store, self.dlm_cfg, stream.child("dlm").rng)

        # dialect rows start from the base-table statistics, the same move a
        # pretrained model's tokenizer extension would make
        start, count = self.vocab.block_range(SELFIES_BLOCK)
        table = self.dlm.tok_emb.table.data
        extended = extend_embeddings(table[:start], count, stream.child("extend").rng)
        table[start:start + count] = extended[start:]

        self.molpo_cfg = MolpoConfig(beta=cfg.molpo.beta, lambda_clip=cfg.molpo.lambda_clip,
                                     gamma=cfg.molpo.gamma_map(), c=cfg.molpo.c)

    # -- sizes -------------------------------------------------------------------

    def n_params(self) -> int:
        return self.store.n_values()

    def response_len(self, task: str) -> int:
        return self.cfg.dlm.response_len(task)

    @property
    def prompt_len(self) -> int:
        return self.cfg.dlm.prompt_len

    # -- record plumbing -----------------------------------------------------------

    def encode_question(self, record: InstructionRecord) -> np.ndarray:
        return np.asarray(tokenize_text(record.question, self.vocab), dtype=np.int64)

    def encode_selfies_in(self, record: InstructionRecord) -> np.ndarray:
        if not record.selfies_in:
            return np.zeros(0, dtype=np.int64)
        return np.asarray(tokenize_selfies(record.selfies_in, self.vocab), dtype=np.int64)

    def encode_response(self, record: InstructionRecord) -> np.ndarray:
        """Target ids padded with [EOS] to the task's fixed response length."""
        if record.task in MOLECULE_TASKS:
            ids = tokenize_selfies(record.target, self.vocab)
        else:
            ids = tokenize_text(record.target, self.vocab)
        r = self.response_len(record.task)
        if len(ids) + 1 > r:
            raise ValueError(
                f"{record.task} target needs {len(ids) + 1} slots, response length is {r}")
        out = np.full(r, self.vocab.eos_id, dtype=np.int64)
        out[:len(ids)] = ids
        return out

    def prompt_arrays(self, records: list[InstructionRecord]
                      ) -> tuple[np.ndarray, np.ndarray]:
        """Fixed-width prompt ids and segment ids, right-padded with [PAD]."""
        from ..dlm import SEG_QUESTION, SEG_SELFIES

        P = self.prompt_len
        B = len(records)
        ids = np.full((B, P), self.vocab.pad_id, dtype=np.int64)
        segs = np.full((B, P), SEG_QUESTION, dtype=np.int64)
        for b, rec in enumerate(records):
            q = self.encode_question(rec)
            s = self.encode_selfies_in(rec)
            if len(q) + len(s) > P:
                raise ValueError(
                    f"prompt needs {len(q) + len(s)} slots, prompt_len is {P}")
            ids[b, :len(q)] = q
            ids[b, len(q):len(q) + len(s)] = s
            segs[b, len(q):len(q) + len(s)] = SEG_SELFIES
        return ids, segs

    def graph_of(self, record: InstructionRecord) -> MolecularGraph | None:
        if not record.selfies_in:
            return None
        return decode_tokens(split_tokens(record.selfies_in))

    def align_graph(self, g: MolecularGraph, rng: np.random.Generator | None = None) -> Tensor:
        """Aligned embedding (n_queries, d_model) for one graph."""
        return self.aligner(self.encoder.forward(g, rng=rng))

    def align_graphs(self, graphs: list[MolecularGraph],
                     rng: np.random.Generator | None = None) -> Tensor:
        """Batched aligned embeddings (B, n_queries, d_model)."""
        rows, real = self.encoder.forward_batch(graphs, rng=rng)
        return self.aligner(rows, key_mask=real)

    def predictor(self) -> "_PaddedPredictor":
        """Inference-side model view that pads prompts exactly like training."""
        return _PaddedPredictor(self)

    # -- persistence -------------------------------------------------------------------

    def save(self, path) -> None:
        nm.save_tensors(path, self.store.state_dict())

    def load(self, path) -> None:
        self.store.load_state_dict(nm.load_tensors(path))

    @staticmethod
    def from_checkpoint(cfg: Config, path) -> "ModelBundle":
        if not Path(path).exists():
            raise FileNotFoundError(f"missing prerequisite checkpoint: {path}")
        bundle = ModelBundle(cfg)
        bundle.load(path)
        return bundle


class _PaddedPredictor:
    """Right-pads q+s to the bundle's fixed prompt width before predicting,
    so response tokens sit at the same absolute positions as in training."""

    def __init__(self, bundle: ModelBundle):
        self._bundle = bundle

    def predict(self, x_t, q, s, h_aligned=None):
        from ..dlm import SEG_QUESTION, SEG_SELFIES

        b = self._bundle
        q = np.asarray(q, dtype=np.int64)
        s = np.asarray(s, dtype=np.int64)
        P = b.prompt_len
        if len(q) + len(s) > P:
            raise ValueError(f"prompt needs {len(q) + len(s)} slots, prompt_len is {P}")
        ids = np.full(P, b.vocab.pad_id, dtype=np.int64)
        segs = np.full(P, SEG_QUESTION, dtype=np.int64)
        ids[:len(q)] = q
        ids[len(q):len(q) + len(s)] = s
        segs[len(q):len(q) + len(s)] = SEG_SELFIES
        h = h_aligned.reshape(1, *h_aligned.shape) if h_aligned is not None else None
        logits = b.dlm.predict_batch(np.asarray(x_t, dtype=np.int64)[None, :],
                                     ids[None, :], segs[None, :], h_aligned=h,
                                     pad_id=b.vocab.pad_id)
        return logits[0]
