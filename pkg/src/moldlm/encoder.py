"""Hybrid graph encoder: a local message-passing branch plus a global
graph-token transformer branch, concatenated row-wise, with the two
pretraining heads (functional-group prediction, string reconstruction).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .molgraph import ELEMENTS, MolecularGraph, N_FUNCTIONAL_GROUPS
from .numerics import (
    Embedding,
    FeedForward,
    LayerNorm,
    Linear,
    ParameterStore,
    Tensor,
    TransformerLayer,
    concat,
    sinusoidal_positions,
)
from .selfies import DIALECT_TOKENS

__all__ = [
    "EncoderConfig",
    "HybridEmbedding",
    "HybridGraphEncoder",
    "hybrid_concat",
    "FuncGroupHead",
    "func_group_loss",
    "ReconDecoder",
    "recon_loss",
    "pretrain_encoder",
]

SEGMENT_ORDER = ("local_graph", "local_nodes", "global_graph", "global_nodes", "global_edges")


@dataclass
class EncoderConfig:
    d_g: int = 64
    gine_layers: int = 3
    gt_layers: int = 2
    gt_heads: int = 4
    id_dim: int | None = None   # identifier width; caps graph size, default d_g // 2
    dtype: type = np.float64

    def __post_init__(self):
        if self.d_g % self.gt_heads != 0:
            raise ValueError("d_g must be divisible by gt_heads")
        if self.id_dim is None:
            self.id_dim = self.d_g // 2


@dataclass
class HybridEmbedding:
    """Stacked branch outputs: (2|V| + |E| + 2) rows of width d_g."""

    rows: Tensor
    segments: tuple[tuple[str, int, int], ...]

    def segment_of(self, row: int) -> str:
        for name, start, stop in self.segments:
            if start <= row < stop:
                return name
        raise IndexError(f"row {row} out of range")

    def span(self, name: str) -> tuple[int, int]:
        for seg, start, stop in self.segments:
            if seg == name:
                return start, stop
        raise KeyError(name)


def hybrid_concat(gine_out: tuple[Tensor, Tensor],
                  gt_out: tuple[Tensor, Tensor, Tensor]) -> HybridEmbedding:
    """Stack [local graph row; local node rows; global graph row; global node
    rows; global edge rows] and record the segment index."""
    h_g_local, h_v_local = gine_out
    h_g_global, h_v_global, h_e_global = gt_out
    parts = [h_g_local, h_v_local, h_g_global, h_v_global, h_e_global]
    width = parts[0].shape[-1]
    for p in parts:
        if p.shape[-1] != width:
            raise ValueError(f"branch width mismatch: {p.shape} vs width {width}")
    segments = []
    start = 0
    for name, p in zip(SEGMENT_ORDER, parts):
        n = p.shape[0]
        segments.append((name, start, start + n))
        start += n
    return HybridEmbedding(rows=concat(parts, axis=0), segments=tuple(segments))


class HybridGraphEncoder:
    def __init__(self, store: ParameterStore, cfg: EncoderConfig,
                 rng: np.random.Generator, prefix: str = "encoder"):
        self.cfg = cfg
        d, dt = cfg.d_g, cfg.dtype
        self.atom_emb = Embedding(store, f"{prefix}.atom_emb", len(ELEMENTS), d, rng, dtype=dt)
        self.bond_emb = Embedding(store, f"{prefix}.bond_emb", 3, d, rng, dtype=dt)
        self.gine_mlps = [
            FeedForward(store, f"{prefix}.gine{i}", d, d, rng, dtype=dt)
            for i in range(cfg.gine_layers)
        ]
        self.graph_token = store.add(f"{prefix}.graph_token",
                                     rng.normal(0.0, 0.02, size=(1, d)), dtype=dt)
        self.type_emb = Embedding(store, f"{prefix}.type_emb", 2, d, rng, dtype=dt)
        self.id_proj = Linear(store, f"{prefix}.id_proj", 2 * cfg.id_dim, d, rng, dtype=dt)
        self.gt_layers = [
            TransformerLayer(store, f"{prefix}.gt{i}", d, cfg.gt_heads, rng, dtype=dt)
            for i in range(cfg.gt_layers)
        ]
        self.train_mode = True

    # -- identifiers ------------------------------------------------------------

    def node_identifiers(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Random orthonormal identifier rows (n x id_dim), resampled per graph."""
        if n > self.cfg.id_dim:
            raise ValueError(f"graph with {n} atoms exceeds identifier capacity {self.cfg.id_dim}")
        gauss = rng.standard_normal((self.cfg.id_dim, self.cfg.id_dim))
        q, r = np.linalg.qr(gauss)
        q = q * np.sign(np.diag(r))  # make the factorization sign-deterministic
        return q[:n].astype(self.cfg.dtype)

    def _eval_rng(self, g: MolecularGraph) -> np.random.Generator:
        digest = hashlib.sha256(g.to_json().encode()).digest()
        return np.random.default_rng(int.from_bytes(digest[:8], "little"))

    # -- local branch ---------------------------------------------------------------

    def gine_forward(self, g: MolecularGraph) -> tuple[Tensor, Tensor]:
        """Message passing: node update is MLP(h_v + sum ReLU(h_u + bond emb))."""
        if g.n_atoms == 0:
            raise ValueError("cannot encode an empty graph")
        el_ids = np.array([ELEMENTS.index(e) for e in g.elements])
        h = self.atom_emb(el_ids)
        adj_by_order = _adjacency_by_order(g)
        for mlp in self.gine_mlps:
            agg = None
            for order, adj in adj_by_order:
                e = self.bond_emb.table[order - 1]
                msg = Tensor(adj) @ (h + e).relu()
                agg = msg if agg is None else agg + msg
            h = mlp(h + agg) if agg is not None else mlp(h)
        h_g = h.mean(axis=0, keepdims=True)
        return h_g, h

    # -- global branch -----------------------------------------------------------------

    def tokengt_forward(self, g: MolecularGraph,
                        identifiers: np.ndarray | None = None
                        ) -> tuple[Tensor, Tensor, Tensor]:
        """Transformer over [graph token] ++ node tokens ++ edge tokens."""
        if g.n_atoms == 0:
            raise ValueError("cannot encode an empty graph")
        n, m = g.n_atoms, g.n_bonds
        if identifiers is None:
            rng = np.random.default_rng() if self.train_mode else self._eval_rng(g)
            identifiers = self.node_identifiers(n, rng)
        el_ids = np.array([ELEMENTS.index(e) for e in g.elements])
        node_ids = np.concatenate([identifiers, identifiers], axis=1)
        node_tok = self.atom_emb(el_ids) + self.id_proj(Tensor(node_ids)) \
            + self.type_emb.table[0]
        parts = [self.graph_token, node_tok]
        if m:
            orders = np.array([o - 1 for _, _, o in g.bonds])
            edge_ids = np.concatenate(
                [identifiers[[u for u, _, _ in g.bonds]],
                 identifiers[[v for _, v, _ in g.bonds]]], axis=1)
            edge_tok = self.bond_emb(orders) + self.id_proj(Tensor(edge_ids)) \
                + self.type_emb.table[1]
            parts.append(edge_tok)
        x = concat(parts, axis=0)
        for layer in self.gt_layers:
            x = layer(x)
        h_g = x[0:1]
        h_v = x[1:1 + n]
        h_e = x[1 + n:1 + n + m]
        return h_g, h_v, h_e

    def forward(self, g: MolecularGraph,
                rng: np.random.Generator | None = None) -> HybridEmbedding:
        if rng is None and self.train_mode:
            raise ValueError("training-mode forward needs an rng for identifiers")
        ids_rng = rng if rng is not None else self._eval_rng(g)
        identifiers = self.node_identifiers(g.n_atoms, ids_rng)
        return hybrid_concat(self.gine_forward(g), self.tokengt_forward(g, identifiers))

    # -- batched path (training plumbing; same math as the single-graph ops) -----

    def forward_batch(self, graphs: list[MolecularGraph],
                      rng: np.random.Generator | None = None
                      ) -> tuple[Tensor, np.ndarray]:
        """Hybrid rows for B graphs at once: (B, M, d_g) plus a real-row mask.

        Graphs are padded to the largest node/edge count in the batch;
        padding rows must be hidden by the consumer (the aligner's key mask).
        """
        if not graphs:
            raise ValueError("empty graph batch")
        if rng is None and self.train_mode:
            raise ValueError("training-mode forward needs an rng for identifiers")
        dt = self.cfg.dtype
        B = len(graphs)
        N = max(g.n_atoms for g in graphs)
        E = max(g.n_bonds for g in graphs)

        el_ids = np.zeros((B, N), dtype=np.int64)
        node_mask = np.zeros((B, N), dtype=dt)
        adj = np.zeros((3, B, N, N), dtype=dt)
        ids_pad = np.zeros((B, N, self.cfg.id_dim), dtype=dt)
        e_order = np.zeros((B, E), dtype=np.int64)
        e_u = np.zeros((B, E), dtype=np.int64)
        e_v = np.zeros((B, E), dtype=np.int64)
        edge_mask = np.zeros((B, E), dtype=dt)
        for b, g in enumerate(graphs):
            n = g.n_atoms
            el_ids[b, :n] = [ELEMENTS.index(e) for e in g.elements]
            node_mask[b, :n] = 1.0
            ids_rng = rng if rng is not None else self._eval_rng(g)
            ids_pad[b, :n] = self.node_identifiers(n, ids_rng)
            for j, (u, v, order) in enumerate(g.bonds):
                adj[order - 1, b, u, v] = 1.0
                adj[order - 1, b, v, u] = 1.0
                e_order[b, j] = order - 1
                e_u[b, j] = u
                e_v[b, j] = v
                edge_mask[b, j] = 1.0

        # local branch
        h = self.atom_emb(el_ids)
        orders_present = [o for o in range(3) if adj[o].any()]
        for mlp in self.gine_mlps:
            agg = None
            for o in orders_present:
                msg = Tensor(adj[o]) @ (h + self.bond_emb.table[o]).relu()
                agg = msg if agg is None else agg + msg
            h = mlp(h + agg) if agg is not None else mlp(h)
        counts = node_mask.sum(axis=1, keepdims=True)
        nm3 = Tensor(node_mask[:, :, None])
        h_g_local = (h * nm3).sum(axis=1) * Tensor(1.0 / counts)
        h_v_local = h

        # global branch
        batch_idx = np.arange(B)[:, None]
        node_ids = np.concatenate([ids_pad, ids_pad], axis=2)
        tok_nodes = self.atom_emb(el_ids) + self.id_proj(Tensor(node_ids)) \
            + self.type_emb.table[0]
        tok_graph = self.graph_token.take_rows(np.zeros((B, 1), dtype=np.int64))
        parts = [tok_graph, tok_nodes]
        hide = [np.zeros((B, 1), dtype=bool), node_mask == 0.0]
        if E:
            edge_ids = np.concatenate([ids_pad[batch_idx, e_u], ids_pad[batch_idx, e_v]],
                                      axis=2)
            tok_edges = self.bond_emb(e_order) + self.id_proj(Tensor(edge_ids)) \
                + self.type_emb.table[1]
            parts.append(tok_edges)
            hide.append(edge_mask == 0.0)
        x = concat(parts, axis=1)
        key_hide = np.concatenate(hide, axis=1)
        attn_mask = key_hide[:, None, None, :] if key_hide.any() else None
        for layer in self.gt_layers:
            x = layer(x, mask=attn_mask)
        h_g_global = x[:, 0:1]
        h_v_global = x[:, 1:1 + N]
        blocks = [h_g_local.reshape(B, 1, self.cfg.d_g), h_v_local, h_g_global, h_v_global]
        real = [np.ones((B, 1), dtype=bool), node_mask > 0,
                np.ones((B, 1), dtype=bool), node_mask > 0]
        if E:
            blocks.append(x[:, 1 + N:1 + N + E])
            real.append(edge_mask > 0)
        rows = concat(blocks, axis=1)
        return rows, np.concatenate(real, axis=1)


def _adjacency_by_order(g: MolecularGraph) -> list[tuple[int, np.ndarray]]:
    n = g.n_atoms
    by_order: dict[int, np.ndarray] = {}
    for u, v, order in g.bonds:
        adj = by_order.setdefault(order, np.zeros((n, n)))
        adj[u, v] = 1.0
        adj[v, u] = 1.0
    return sorted(by_order.items())


# -- pretraining heads ------------------------------------------------------------------


class FuncGroupHead:
    """Three-layer perceptron scoring functional-group presence from the
    mean-pooled aligned embedding."""

    def __init__(self, store: ParameterStore, d_in: int, rng: np.random.Generator,
                 n_groups: int = N_FUNCTIONAL_GROUPS, prefix: str = "func_head",
                 dtype=np.float64):
        self.fc1 = Linear(store, f"{prefix}.fc1", d_in, d_in, rng, dtype=dtype)
        self.fc2 = Linear(store, f"{prefix}.fc2", d_in, d_in, rng, dtype=dtype)
        self.fc3 = Linear(store, f"{prefix}.fc3", d_in, n_groups, rng, dtype=dtype)

    def __call__(self, h_aligned: Tensor) -> Tensor:
        pooled = h_aligned.mean(axis=0)
        return self.fc3(self.fc2(self.fc1(pooled).relu()).relu())


def func_group_loss(h_aligned: Tensor, y: np.ndarray, head: FuncGroupHead) -> Tensor:
    """Sum of per-group binary cross-entropies on the head's logits."""
    logits = head(h_aligned)
    y = np.asarray(y, dtype=logits.dtype)
    # -[y log sigmoid(z) + (1-y) log(1-sigmoid(z))] == softplus(z) - y*z
    return (nm.softplus(logits) - logits * Tensor(y)).sum()


class ReconDecoder:
    """Small causal token decoder conditioned by prefixing aligned rows."""

    def __init__(self, store: ParameterStore, d_in: int, rng: np.random.Generator,
                 d_model: int = 64, n_layers: int = 2, n_heads: int = 4,
                 max_len: int = 96, prefix: str = "recon", dtype=np.float64):
        self.vocab_size = len(DIALECT_TOKENS)
        self.bos_id = self.vocab_size
        self.d_model = d_model
        self.prefix_proj = Linear(store, f"{prefix}.prefix_proj", d_in, d_model, rng, dtype=dtype)
        self.tok_emb = Embedding(store, f"{prefix}.tok_emb", self.vocab_size + 1, d_model,
                                 rng, dtype=dtype)
        self.layers = [
            TransformerLayer(store, f"{prefix}.layer{i}", d_model, n_heads, rng, dtype=dtype)
            for i in range(n_layers)
        ]
        self.final_ln = LayerNorm(store, f"{prefix}.final_ln", d_model, dtype=dtype)
        self.out = Linear(store, f"{prefix}.out", d_model, self.vocab_size, rng, dtype=dtype)
        self.pos = sinusoidal_positions(max_len, d_model, dtype=dtype)

    def logits(self, h_aligned: Tensor, s_local: np.ndarray) -> Tensor:
        """Next-token logits at each target position, prefix fully visible."""
        n_prefix = h_aligned.shape[0]
        inputs = np.concatenate([[self.bos_id], s_local[:-1]]) if len(s_local) else \
            np.array([self.bos_id])
        L = len(inputs)
        total = n_prefix + L
        if total > self.pos.shape[0]:
            raise ValueError(f"sequence of {total} exceeds decoder max length")
        x = concat([self.prefix_proj(h_aligned), self.tok_emb(inputs)], axis=0)
        x = x + Tensor(self.pos[:total])
        mask = np.zeros((total, total), dtype=bool)
        # token queries attend to the prefix and causally to earlier tokens
        token_part = np.triu(np.ones((L, L), dtype=bool), k=1)
        mask[n_prefix:, n_prefix:] = token_part
        for layer in self.layers:
            x = layer(x, mask=mask)
        return self.out(self.final_ln(x[n_prefix:]))


def recon_loss(h_aligned: Tensor, s_local: np.ndarray, decoder: ReconDecoder) -> Tensor:
    """Autoregressive NLL of the dialect token sequence given the aligned rows."""
    s_local = np.asarray(s_local, dtype=np.int64)
    if len(s_local) == 0:
        raise ValueError("reconstruction target must be nonempty")
    logits = decoder.logits(h_aligned, s_local)
    return nm.cross_entropy(logits, s_local)


# -- stage-1 pretraining loop ----------------------------------------------------------


@dataclass
class PretrainLog:
    func_losses: list[float] = field(default_factory=list)
    recon_losses: list[float] = field(default_factory=list)


def pretrain_encoder(dataset, encoder: HybridGraphEncoder, aligner, func_head: FuncGroupHead,
                     recon: ReconDecoder, store: ParameterStore, optimizer, epochs: int,
                     rng: np.random.Generator, batch_size: int = 8,
                     log_every: int | None = None) -> PretrainLog:
    """Joint minimization of the two auxiliary losses (equal weight).

    ``dataset`` is a sequence of (graph, group_flags, dialect_local_ids).
    Returns per-epoch mean losses for both heads.
    """
    if not dataset:
        raise ValueError("empty pretraining dataset")
    log = PretrainLog()
    n = len(dataset)
    for epoch in range(epochs):
        order = rng.permutation(n)
        f_sum = r_sum = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            store.zero_grad()
            total = None
            for i in idx:
                g, y, s_local = dataset[i]
                h = aligner(encoder.forward(g, rng=rng))
                lf = func_group_loss(h, y, func_head)
                lr = recon_loss(h, s_local, recon)
                f_sum += lf.item()
                r_sum += lr.item()
                item_loss = lf + lr
                total = item_loss if total is None else total + item_loss
            nm.backward(total * (1.0 / len(idx)))
            optimizer.step(store)
        log.func_losses.append(f_sum / n)
        log.recon_losses.append(r_sum / n)
        if log_every and (epoch + 1) % log_every == 0:
            print(f"[encoder-pretrain] epoch {epoch + 1}: "
                  f"func {log.func_losses[-1]:.4f} recon {log.recon_losses[-1]:.4f}")
    return log
