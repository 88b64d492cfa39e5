"""Speaker embedding, conversation graph, random masking and masked GCN.

Nodes are (dialogue, modality, utterance) triples. Within a dialogue every pair
of nodes is joined: same-modality pairs get weight ``1 - angle/pi`` and
cross-modality pairs the same quantity scaled by ``aleph``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import ContractError
from .numerics import (
    Module,
    RngStream,
    Tensor,
    relu,
    scatter_dense,
    seeded_uniform_init,
    segment_sum,
    spmm,
    sqrt,
    take_rows,
    vector_angle,
)
from .numerics import tensor as T

log = logging.getLogger(__name__)

PROPAGATION_MODES = ("auto", "dense", "sparse")


# ----------------------------------------------------------------------------
# edge weights


def angular_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """``1 - angle(a, b) / pi``; a zero vector counts as orthogonal."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        log.warning("zero-norm node feature; using similarity 0")
        return 0.5
    # atan2 form of the angle: exact at 0 and pi, unlike acos of the cosine
    ua, ub = a / na, b / nb
    angle = 2.0 * math.atan2(np.linalg.norm(ua - ub), np.linalg.norm(ua + ub))
    return 1.0 - angle / math.pi


def edge_weight_intra(n_i, n_j) -> float:
    return angular_similarity(n_i, n_j)


def edge_weight_inter(n_i, n_j, aleph: float = 0.5) -> float:
    return aleph * angular_similarity(n_i, n_j)


def edge_weights(x: Tensor, rows: np.ndarray, cols: np.ndarray, inter: np.ndarray, aleph: float) -> Tensor:
    """Differentiable weights for the edge list ``(rows, cols)`` over node features ``x``."""
    zero = ~x.data.any(axis=-1)
    if np.any(zero):
        log.warning("%d zero-norm node feature(s); their similarities are set to 0", int(zero.sum()))
    angle = vector_angle(take_rows(x, rows), take_rows(x, cols))
    base = T.sub(1.0, T.mul(angle, 1.0 / math.pi))
    scale = np.where(inter, aleph, 1.0)
    return T.mul(base, Tensor(scale))


# ----------------------------------------------------------------------------
# speaker embedding


class SpeakerTable(Module):
    def __init__(self, n_speakers: int, speaker_dim: int, feature_dim: int, rng: RngStream):
        self.n_speakers = n_speakers
        self.embeddings = seeded_uniform_init(rng, (n_speakers, speaker_dim))
        self.w_s = seeded_uniform_init(rng, (speaker_dim, feature_dim))

    def __call__(self, x_head: Tensor, speaker_ids: np.ndarray) -> Tensor:
        """``x_head + W_s S_i`` row-wise."""
        speaker_ids = np.asarray(speaker_ids, dtype=np.int64)
        if speaker_ids.size and (speaker_ids.min() < 0 or speaker_ids.max() >= self.n_speakers):
            raise ContractError(f"speaker id outside [0, {self.n_speakers})")
        return x_head + take_rows(self.embeddings, speaker_ids) @ self.w_s


def embed_speaker(x_head: Tensor, speaker_ids: np.ndarray, table: SpeakerTable) -> Tensor:
    return table(x_head, speaker_ids)


# ----------------------------------------------------------------------------
# graph


@dataclass
class ConversationGraph:
    features: Tensor  # (N, D_f)
    node_dialogue: np.ndarray
    node_modality: np.ndarray
    node_utterance: np.ndarray
    rows: np.ndarray  # undirected edges, rows < cols
    cols: np.ndarray
    inter: np.ndarray
    weight_source: Tensor  # features the edge weights are computed from (before masking)
    node_mask: np.ndarray
    edge_mask: np.ndarray
    aleph: float = 0.5
    _weights: Optional[Tensor] = None  # (E,), computed on first use

    @property
    def weights(self) -> Tensor:
        if self._weights is None:
            self._weights = edge_weights(self.weight_source, self.rows, self.cols, self.inter, self.aleph)
        return self._weights

    @weights.setter
    def weights(self, value: Tensor) -> None:
        self._weights = value

    def live_weights(self) -> tuple[np.ndarray, Tensor]:
        """Indices of unmasked edges and their weights.

        When the full weight vector has not been needed yet, only the live
        edges are evaluated, so masked edges cost nothing.
        """
        live = np.flatnonzero(~self.edge_mask)
        if self._weights is not None:
            w = self._weights if live.size == self.n_edges else take_rows(self._weights, live)
        else:
            w = edge_weights(self.weight_source, self.rows[live], self.cols[live], self.inter[live], self.aleph)
        return live, w

    @property
    def n_nodes(self) -> int:
        return self.node_dialogue.shape[0]

    @property
    def n_edges(self) -> int:
        return self.rows.shape[0]

    def masked_weights(self) -> Tensor:
        if not self.edge_mask.any():
            return self.weights
        return T.mul(self.weights, Tensor((~self.edge_mask).astype(np.float64)))

    def adjacency(self, masked: bool = True) -> np.ndarray:
        """Dense symmetric weight matrix (values only, no tape)."""
        w = self.masked_weights().data if masked else self.weights.data
        A = np.zeros((self.n_nodes, self.n_nodes))
        A[self.rows, self.cols] = w
        A[self.cols, self.rows] = w
        return A

    def density(self) -> float:
        live = int((~self.edge_mask).sum())
        return (2 * live + self.n_nodes) / float(self.n_nodes ** 2)


def graph_structure(node_dialogue: np.ndarray, node_modality: np.ndarray):
    """All within-dialogue node pairs ``i < j`` and whether they cross modalities."""
    rows, cols = [], []
    for d in np.unique(node_dialogue):
        ids = np.flatnonzero(node_dialogue == d)
        r, c = np.triu_indices(ids.size, k=1)
        rows.append(ids[r])
        cols.append(ids[c])
    rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.intp)
    cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.intp)
    inter = node_modality[rows] != node_modality[cols]
    return rows.astype(np.intp), cols.astype(np.intp), inter


def build_graph(features: Tensor, node_dialogue, node_modality, node_utterance, aleph: float = 0.5) -> ConversationGraph:
    if not 0.0 < aleph <= 1.0:
        raise ValueError("aleph must lie in (0, 1]")
    node_dialogue = np.asarray(node_dialogue)
    node_modality = np.asarray(node_modality)
    rows, cols, inter = graph_structure(node_dialogue, node_modality)
    n = node_dialogue.shape[0]
    return ConversationGraph(
        features=features,
        node_dialogue=node_dialogue,
        node_modality=node_modality,
        node_utterance=np.asarray(node_utterance),
        rows=rows,
        cols=cols,
        inter=inter,
        weight_source=features,
        node_mask=np.zeros(n, dtype=bool),
        edge_mask=np.zeros(rows.shape[0], dtype=bool),
        aleph=aleph,
    )


def apply_mask(graph: ConversationGraph, rng: Optional[RngStream], mask_rate: float,
               mask_token: Tensor, training: bool = True) -> ConversationGraph:
    """Mask nodes and edges independently with probability ``mask_rate``.

    Masked nodes take the mask token as their feature; masked edges get weight
    zero. Outside training the graph is returned unchanged.
    """
    if not 0.0 <= mask_rate < 1.0:
        raise ValueError("mask_rate must lie in [0, 1)")
    if not training or mask_rate == 0.0:
        return graph
    node_mask = rng.bernoulli(mask_rate, graph.n_nodes)
    edge_mask = rng.bernoulli(mask_rate, graph.n_edges)
    m = Tensor(node_mask.astype(np.float64)[:, None])
    features = T.add(T.mul(graph.features, T.sub(1.0, m)), T.mul(m, mask_token))
    return replace(graph, features=features, node_mask=node_mask, edge_mask=edge_mask)


# ----------------------------------------------------------------------------
# renormalised propagation


def propagation_entries(graph: ConversationGraph):
    """Triplets of ``(D + I)^-1/2 (A_M + I) (D + I)^-1/2`` with ``D`` from the masked ``A_M``.

    Masked edges are dropped from the triplets; the diagonal is always present.
    """
    n = graph.n_nodes
    live, wl = graph.live_weights()
    r, c = graph.rows[live], graph.cols[live]
    deg = T.add(segment_sum(wl, r, n), segment_sum(wl, c, n))
    inv = T.div(1.0, sqrt(T.add(deg, 1.0)))
    off = T.mul(T.mul(take_rows(inv, r), wl), take_rows(inv, c))
    diag = T.mul(inv, inv)
    diag_idx = np.arange(n)
    rows = np.concatenate([r, c, diag_idx])
    cols = np.concatenate([c, r, diag_idx])
    values = T.concat([off, off, diag], axis=0)
    return rows, cols, values


def propagation_matrix(graph: ConversationGraph) -> Tensor:
    rows, cols, values = propagation_entries(graph)
    return scatter_dense(rows, cols, values, graph.n_nodes)


def dense_propagation_oracle(A: np.ndarray) -> np.ndarray:
    """Reference ``(D + I)^-1/2 (A + I) (D + I)^-1/2`` from a dense matrix."""
    d = A.sum(axis=1)
    s = np.diag(1.0 / np.sqrt(d + 1.0))
    return s @ (A + np.eye(A.shape[0])) @ s


class MaskedGCN(Module):
    """Two renormalised graph-convolution layers with ReLU between them."""

    def __init__(self, feature_dim: int, gcn_dim: int, rng: RngStream, propagation: str = "auto"):
        if propagation not in PROPAGATION_MODES:
            raise ValueError(f"propagation must be one of {PROPAGATION_MODES}")
        self.propagation = propagation
        self.mask_token = seeded_uniform_init(rng, (feature_dim,))
        self.w1 = seeded_uniform_init(rng, (feature_dim, gcn_dim))
        self.w2 = seeded_uniform_init(rng, (gcn_dim, gcn_dim))

    def use_sparse(self, graph: ConversationGraph) -> bool:
        if self.propagation == "auto":
            return graph.density() < 0.5
        return self.propagation == "sparse"

    def __call__(self, graph: ConversationGraph) -> Tensor:
        rows, cols, values = propagation_entries(graph)
        n = graph.n_nodes
        if self.use_sparse(graph):
            def prop(h):
                return spmm(rows, cols, values, h, n)
        else:
            P = scatter_dense(rows, cols, values, n)

            def prop(h):
                return P @ h
        h1 = relu(prop(graph.features @ self.w1))
        return prop(h1 @ self.w2)
