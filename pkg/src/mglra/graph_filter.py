"""Graph attention filtering over a per-utterance star graph.

Each utterance gets four nodes: a multimodal centre (projection of the
concatenated contextual vectors) and one node per modality. Every edge joins a
unimodal node to the centre and carries that modality's relation type.
"""
from __future__ import annotations

import numpy as np

from .numerics import Module, RngStream, Tensor, concat, seeded_uniform_init, softmax
from .numerics import tensor as T

MODALITIES = ("text", "audio", "vision")
CENTER = 0
# node index -> modality index of its relation to the centre
NODE_RELATION = {1: 0, 2: 1, 3: 2}


def neighbourhood(node: int) -> list[tuple[int, int]]:
    """(neighbour, relation) pairs incident to ``node`` in the star graph."""
    if node == CENTER:
        return [(j, NODE_RELATION[j]) for j in (1, 2, 3)]
    if node in NODE_RELATION:
        return [(CENTER, NODE_RELATION[node])]
    raise IndexError(f"node index {node} outside 0..3")


def relation_vector(V: Tensor, C: Tensor, W: Tensor, i: int, j: int, k: int) -> Tensor:
    """``W^T [V_i || V_j || C_k]`` for node values ``V (..., 4, P)``."""
    if not (0 <= i < 4 and 0 <= j < 4):
        raise IndexError(f"node indices ({i}, {j}) outside 0..3")
    if not 0 <= k < C.shape[0]:
        raise IndexError(f"relation index {k} outside 0..{C.shape[0] - 1}")
    vi = V[..., i, :]
    vj = V[..., j, :]
    ck = C[k]
    if vi.ndim > 1:
        ck = T.mul(Tensor(np.ones(vi.shape[:-1] + (1,))), ck)
    return concat([vi, vj, ck], axis=-1) @ W


def filter_attention(scores: Tensor) -> Tensor:
    """Softmax over the joint (neighbour, relation) axis, the last one."""
    if scores.shape[-1] == 0:
        raise ValueError("node has an empty neighbourhood")
    return softmax(scores, axis=-1)


def filtered_feature(alpha: Tensor, c: Tensor) -> Tensor:
    """``sum_q alpha[..., q] * c[..., q, :]``."""
    return T.sum_(T.mul(T.reshape(alpha, alpha.shape + (1,)), c), axis=-2)


class GraphFilter(Module):
    def __init__(self, d_h: int, width: int, relation_width: int, rng: RngStream):
        self.d_h = d_h
        self.width = width
        self.relation_width = relation_width
        self.proj_center = seeded_uniform_init(rng, (3 * d_h, width))
        self.proj = {m: seeded_uniform_init(rng, (d_h, width)) for m in MODALITIES}
        self.relations = seeded_uniform_init(rng, (3, relation_width))
        self.pair_transform = seeded_uniform_init(rng, (2 * width + relation_width, width))
        self.score = seeded_uniform_init(rng, (3, width))

    def node_values(self, ctx: dict) -> Tensor:
        """Stack the four node rows into ``(..., 4, P)``."""
        center = concat([ctx[m] for m in MODALITIES], axis=-1) @ self.proj_center
        rows = [center] + [ctx[m] @ self.proj[m] for m in MODALITIES]
        lead = center.shape[:-1]
        return concat([T.reshape(r, lead + (1, self.width)) for r in rows], axis=-2)

    def node_output(self, V: Tensor, node: int) -> tuple[Tensor, Tensor]:
        """Attention weights ``(..., Q)`` and filtered feature ``(..., P)`` of one node."""
        pairs = neighbourhood(node)
        lead = V.shape[:-2]
        cs = [relation_vector(V, self.relations, self.pair_transform, node, j, k) for j, k in pairs]
        c = concat([T.reshape(ci, lead + (1, self.width)) for ci in cs], axis=-2)
        scores = concat(
            [T.reshape(T.sum_(T.mul(ci, self.score[k]), axis=-1), lead + (1,)) for ci, (_, k) in zip(cs, pairs)],
            axis=-1,
        )
        alpha = filter_attention(scores)
        return alpha, filtered_feature(alpha, c)

    def __call__(self, ctx: dict, with_center: bool = False) -> dict:
        V = self.node_values(ctx)
        out = {m: self.node_output(V, idx)[1] for idx, m in enumerate(MODALITIES, start=1)}
        if with_center:
            out["center"] = self.node_output(V, CENTER)[1]
        return out
