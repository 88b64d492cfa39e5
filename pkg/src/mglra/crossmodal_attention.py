"""Cross-modal multi-head dot-product attention."""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .context_encoder import GRUCell
from .numerics import Module, RngStream, ShapeError, Tensor, attention_heads, seeded_uniform_init, softmax
from .numerics import tensor as T

MODALITIES = ("text", "audio", "vision")
COMBINE_MODES = ("mean", "sum", "concat")


def head_attention(
    q_src: Tensor,
    kv_src: Tensor,
    w_q: Tensor,
    w_k: Tensor,
    w_v: Tensor,
    key_mask: Optional[np.ndarray] = None,
    scale: bool = False,
) -> Tensor:
    """``softmax((q_src W_q)(kv_src W_k)^T) (kv_src W_v)`` for a single head.

    No ``1/sqrt(d)`` factor unless ``scale`` is set. ``key_mask`` has shape
    ``(..., T_K)`` and excludes padded keys.
    """
    if q_src.shape[-1] != w_q.shape[0] or kv_src.shape[-1] != w_k.shape[0] or kv_src.shape[-1] != w_v.shape[0]:
        raise ShapeError(f"head_attention: sources {q_src.shape}, {kv_src.shape} do not match projections "
                         f"{w_q.shape}, {w_k.shape}, {w_v.shape}")
    q = q_src @ w_q
    k = kv_src @ w_k
    v = kv_src @ w_v
    scores = q @ T.swapaxes(k, -1, -2)
    if scale:
        scores = scores * (1.0 / math.sqrt(w_q.shape[1]))
    mask = None if key_mask is None else np.expand_dims(key_mask, -2)
    return softmax(scores, axis=-1, mask=mask) @ v


class MultiHeadCrossAttention(Module):
    """``n_heads`` heads of width ``head_dim``; projections stored fused per role."""

    def __init__(self, d_in: int, n_heads: int, head_dim: int, rng: RngStream, scale: bool = False):
        if n_heads < 1 or head_dim < 1:
            raise ValueError("n_heads and head_dim must be positive")
        self.n_heads = n_heads
        self.head_dim = head_dim
        self.scale = scale
        width = n_heads * head_dim
        self.w_q = seeded_uniform_init(rng, (d_in, width))
        self.w_k = seeded_uniform_init(rng, (d_in, width))
        self.w_v = seeded_uniform_init(rng, (d_in, width))

    @property
    def out_width(self) -> int:
        return self.n_heads * self.head_dim

    def head_weights(self, i: int) -> tuple[Tensor, Tensor, Tensor]:
        cols = slice(i * self.head_dim, (i + 1) * self.head_dim)
        return self.w_q[:, cols], self.w_k[:, cols], self.w_v[:, cols]

    def __call__(self, q_src: Tensor, kv_src: Tensor, key_mask: Optional[np.ndarray] = None) -> Tensor:
        """Concatenated heads, shape ``(..., T_Q, n_heads * head_dim)``."""
        return attention_heads(q_src, kv_src, self.w_q, self.w_k, self.w_v, self.n_heads, self.head_dim,
                               key_mask=key_mask, scale=self.scale)


class CrossModalAlignment(Module):
    """Attention of each modality against both partners, then a GRU update.

    Separate projections per ordered pair ``(m, m')``. Partner outputs are
    averaged by default; ``combine`` may also be ``"sum"`` or ``"concat"``.
    """

    def __init__(self, width: int, n_heads: int, head_dim: int, rng: RngStream,
                 scale: bool = False, combine: str = "mean"):
        if combine not in COMBINE_MODES:
            raise ValueError(f"combine must be one of {COMBINE_MODES}, got {combine!r}")
        self.combine = combine
        self.mha = {
            f"{m}->{p}": MultiHeadCrossAttention(width, n_heads, head_dim, rng.substream(f"mha/{m}->{p}"), scale)
            for m in MODALITIES for p in MODALITIES if p != m
        }
        head_width = n_heads * head_dim * (2 if combine == "concat" else 1)
        self.head_width = head_width
        self.gru = {m: GRUCell(head_width, width, rng.substream(f"gru/{m}")) for m in MODALITIES}

    def multi_head(self, m: str, sources: dict, key_mask: Optional[np.ndarray] = None) -> Tensor:
        outs = [self.mha[f"{m}->{p}"](sources[m], sources[p], key_mask) for p in MODALITIES if p != m]
        if self.combine == "concat":
            return T.concat(outs, axis=-1)
        total = outs[0] + outs[1]
        return total * 0.5 if self.combine == "mean" else total

    def gru_update(self, m: str, prior: Tensor, head: Tensor) -> Tensor:
        return self.gru[m](prior, head)
