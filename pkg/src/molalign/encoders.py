"""Graph encoder (GIN), hashed-bag text encoder, and the joint-space projections."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from molalign import nn
from molalign.chem.graph import (
    NUM_ATOM_TYPES,
    NUM_BOND_DIRECTIONS,
    NUM_BOND_TYPES,
    NUM_CHIRALITY,
    MolecularGraph,
)


@dataclass(frozen=True)
class GinConfig:
    layers: int = 5
    hidden_dim: int = 256
    epsilon: float = 0.0
    readout: str = "mean"
    num_atom_types: int = NUM_ATOM_TYPES
    num_chirality: int = NUM_CHIRALITY
    num_bond_types: int = NUM_BOND_TYPES
    num_bond_directions: int = NUM_BOND_DIRECTIONS

    def __post_init__(self):
        if self.layers < 1 or self.hidden_dim < 1:
            raise ValueError("GIN needs layers >= 1 and hidden_dim >= 1")
        if self.readout not in ("mean", "sum"):
            raise ValueError(f"unknown readout {self.readout!r}")


@dataclass(frozen=True)
class TextEncoderConfig:
    vocab_buckets: int = 32768
    embed_dim: int = 128
    output_dim: int = 256
    body_trainable: bool = False
    head_trainable: bool = True

    def __post_init__(self):
        b = self.vocab_buckets
        if b < 1 or b & (b - 1):
            raise ValueError("vocab_buckets must be a power of two")
        if self.embed_dim < 1 or self.output_dim < 1:
            raise ValueError("text encoder dims must be >= 1")


@dataclass(frozen=True)
class ProjectionConfig:
    joint_dim: int = 128
    normalize: bool = True

    def __post_init__(self):
        if self.joint_dim < 1:
            raise ValueError("joint_dim must be >= 1")


@dataclass(frozen=True)
class ModelConfig:
    gin: GinConfig = field(default_factory=GinConfig)
    text: TextEncoderConfig = field(default_factory=TextEncoderConfig)
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            GinConfig(**d.get("gin", {})),
            TextEncoderConfig(**d.get("text", {})),
            ProjectionConfig(**d.get("projection", {})),
        )

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _embedding(rng, rows, dim):
    return rng.normal(0.0, 1.0 / np.sqrt(dim), size=(rows, dim))


def init_graph_params(store: nn.ParameterStore, cfg: GinConfig, rng: np.random.Generator) -> None:
    d = cfg.hidden_dim
    store.add("gin.atom_embed", _embedding(rng, cfg.num_atom_types, d))
    store.add("gin.chirality_embed", _embedding(rng, cfg.num_chirality, d))
    for k in range(cfg.layers):
        p = f"gin.{k}."
        store.add(p + "bond_embed", _embedding(rng, cfg.num_bond_types, d))
        store.add(p + "direction_embed", _embedding(rng, cfg.num_bond_directions, d))
        store.add(p + "w1", nn.glorot(rng, d, d))
        store.add(p + "b1", np.zeros(d))
        store.add(p + "w2", nn.glorot(rng, d, d))
        store.add(p + "b2", np.zeros(d))


def init_text_params(store: nn.ParameterStore, cfg: TextEncoderConfig, rng: np.random.Generator) -> None:
    store.add("text.body", rng.normal(0.0, 1.0, size=(cfg.vocab_buckets, cfg.embed_dim)), cfg.body_trainable)
    store.add("text.w", nn.glorot(rng, cfg.embed_dim, cfg.output_dim), cfg.head_trainable)
    store.add("text.b", np.zeros(cfg.output_dim), cfg.head_trainable)


def init_projection_params(store: nn.ParameterStore, config: ModelConfig, rng: np.random.Generator) -> None:
    d = config.projection.joint_dim
    store.add("proj.W_g", nn.glorot(rng, d, config.gin.hidden_dim))
    store.add("proj.W_t", nn.glorot(rng, d, config.text.output_dim))


def init_params(config: ModelConfig, seed: int) -> nn.ParameterStore:
    """Fresh parameters for both encoders and both projections."""
    rng = np.random.default_rng(seed)
    store = nn.ParameterStore()
    init_graph_params(store, config.gin, rng)
    init_text_params(store, config.text, rng)
    init_projection_params(store, config, rng)
    return store


@dataclass(frozen=True)
class GraphBatch:
    """Several molecular graphs merged into one disjoint graph."""

    node_features: np.ndarray
    edge_index: np.ndarray
    edge_features: np.ndarray
    graph_index: np.ndarray  # owning graph of each node
    num_graphs: int

    @classmethod
    def from_graphs(cls, graphs: Sequence[MolecularGraph]) -> "GraphBatch":
        if not graphs:
            raise ValueError("empty graph batch")
        nodes, edges, efeat, owner = [], [], [], []
        offset = 0
        for g, graph in enumerate(graphs):
            if graph.num_nodes == 0:
                raise ValueError(f"graph {g} has no atoms")
            nodes.append(graph.node_features)
            edges.append(graph.edge_index + offset)
            efeat.append(graph.edge_features)
            owner.append(np.full(graph.num_nodes, g, dtype=np.int64))
            offset += graph.num_nodes
        return cls(
            np.concatenate(nodes),
            np.concatenate(edges, axis=1),
            np.concatenate(efeat),
            np.concatenate(owner),
            len(graphs),
        )

    @property
    def num_nodes(self) -> int:
        return int(self.node_features.shape[0])


def gin_layer(
    h: nn.Tensor,
    edge_index: np.ndarray,
    edge_features: np.ndarray,
    store: nn.ParameterStore,
    layer: int,
    cfg: GinConfig,
    final: bool,
) -> nn.Tensor:
    """One message-passing step.

    ``m_v = (1 + eps) h_v + sum_{u -> v} relu(h_u + e_uv)`` followed by a
    two-layer MLP, with a trailing relu on every layer but the last.
    """
    n = h.shape[0]
    src, dst = edge_index
    if src.size and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= n):
        raise IndexError("edge index refers to a missing node")
    p = f"gin.{layer}."
    m = h if cfg.epsilon == 0 else nn.mul(h, 1.0 + cfg.epsilon)
    if src.size:
        e = nn.add(
            nn.gather(store.tensor(p + "bond_embed"), edge_features[:, 0]),
            nn.gather(store.tensor(p + "direction_embed"), edge_features[:, 1]),
        )
        msg = nn.relu(nn.add(nn.gather(h, src), e))
        m = nn.add(m, nn.scatter_add(msg, dst, n))
    out = nn.relu(nn.add(nn.matmul(m, store.tensor(p + "w1")), store.tensor(p + "b1")))
    out = nn.add(nn.matmul(out, store.tensor(p + "w2")), store.tensor(p + "b2"))
    return out if final else nn.relu(out)


def encode_graphs(batch: GraphBatch | Sequence[MolecularGraph], store: nn.ParameterStore, cfg: GinConfig) -> nn.Tensor:
    """``(num_graphs, hidden_dim)`` pooled graph embeddings."""
    if not isinstance(batch, GraphBatch):
        batch = GraphBatch.from_graphs(batch)
    h = nn.add(
        nn.gather(store.tensor("gin.atom_embed"), batch.node_features[:, 0]),
        nn.gather(store.tensor("gin.chirality_embed"), batch.node_features[:, 1]),
    )
    for k in range(cfg.layers):
        h = gin_layer(h, batch.edge_index, batch.edge_features, store, k, cfg, final=k == cfg.layers - 1)
    pooled = nn.scatter_add(h, batch.graph_index, batch.num_graphs)
    if cfg.readout == "mean":
        counts = np.bincount(batch.graph_index, minlength=batch.num_graphs).astype(np.float64)
        pooled = nn.divide(pooled, nn.constant(counts[:, None]))
    return pooled


def encode_graph(graph: MolecularGraph, store: nn.ParameterStore, cfg: GinConfig) -> np.ndarray:
    return encode_graphs([graph], store, cfg).value[0]


_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")


def tokenize(text: str, vocab_buckets: int = TextEncoderConfig.vocab_buckets) -> list[int]:
    """Lowercased alphanumeric runs, each hashed to a bucket with 64-bit BLAKE2b."""
    ids = []
    for token in _TOKEN_SPLIT.split(text.lower()):
        if token:
            digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
            ids.append(int.from_bytes(digest, "little") % vocab_buckets)
    return ids


def encode_texts(token_lists: Sequence[Sequence[int]], store: nn.ParameterStore, cfg: TextEncoderConfig) -> nn.Tensor:
    """``(num_texts, output_dim)``: mean bucket embedding, then linear and relu."""
    owner = np.concatenate([np.full(len(t), i, dtype=np.int64) for i, t in enumerate(token_lists)] or [np.zeros(0, np.int64)])
    flat = np.fromiter((tok for t in token_lists for tok in t), dtype=np.int64, count=owner.size)
    rows = nn.gather(store.tensor("text.body"), flat)
    bag = nn.scatter_add(rows, owner, len(token_lists))
    counts = np.array([max(len(t), 1) for t in token_lists], dtype=np.float64)[:, None]
    pooled = nn.divide(bag, nn.constant(counts))
    return nn.relu(nn.add(nn.matmul(pooled, store.tensor("text.w")), store.tensor("text.b")))


def encode_text(tokens: Sequence[int], store: nn.ParameterStore, cfg: TextEncoderConfig) -> np.ndarray:
    return encode_texts([tokens], store, cfg).value[0]


def project(h: nn.Tensor, which: str, store: nn.ParameterStore, cfg: ProjectionConfig) -> nn.Tensor:
    """Rows of ``h`` mapped by ``W_g`` or ``W_t`` (stored as ``d x d_in``)."""
    names = {"graph": "proj.W_g", "text": "proj.W_t"}
    if which not in names:
        raise ValueError(f"which must be 'graph' or 'text', got {which!r}")
    w = store.tensor(names[which])
    if h.shape[-1] != w.shape[1]:
        raise ValueError(f"{which} projection expects dim {w.shape[1]}, got {h.shape[-1]}")
    z = nn.matmul(h, nn.transpose(w))
    return nn.l2_normalize(z, axis=1) if cfg.normalize else z


def embed_pairs(
    graphs: GraphBatch | Sequence[MolecularGraph],
    token_lists: Sequence[Sequence[int]],
    store: nn.ParameterStore,
    config: ModelConfig,
) -> tuple[nn.Tensor, nn.Tensor]:
    """Joint-space embeddings ``(Hg, Ht)`` for aligned graph/text batches."""
    hg = project(encode_graphs(graphs, store, config.gin), "graph", store, config.projection)
    ht = project(encode_texts(token_lists, store, config.text), "text", store, config.projection)
    return hg, ht
