"""Memory-based recursive feature alignment.

Each modality owns a memory block whose entries are the utterance sequence.
A round reads every block, summarises it with entry attention, attends
across modalities and writes the GRU-refined sequence back. All reads in a
round see the memory state from the start of that round.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .crossmodal_attention import MODALITIES, CrossModalAlignment
from .errors import ContractError
from .numerics import Module, RngStream, Tensor, seeded_uniform_init, softmax
from .numerics import tensor as T


class MemoryBlock:
    def __init__(self, modality: str):
        self.modality = modality
        self.entries: Optional[Tensor] = None

    @property
    def entry_count(self) -> int:
        if self.entries is None:
            raise ContractError(f"memory block {self.modality} is not initialised")
        return self.entries.shape[-2]

    def init(self, x: Tensor) -> "MemoryBlock":
        if self.entries is not None:
            raise ContractError(f"memory block {self.modality} is already initialised")
        self.entries = x
        return self

    def write_back(self, x: Tensor) -> "MemoryBlock":
        if self.entries is None:
            raise ContractError(f"memory block {self.modality} is not initialised")
        if x.shape != self.entries.shape:
            raise ContractError(f"memory block {self.modality}: write of shape {x.shape} "
                                f"over entries of shape {self.entries.shape}")
        self.entries = x
        return self


def init_memory(modality: str, x: Tensor) -> MemoryBlock:
    return MemoryBlock(modality).init(x)


def entry_attention(entries: Tensor, scorer: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax over entries of the per-entry score ``scorer . entry``.

    This is a width-1 convolution over the entry axis followed by softmax.
    """
    mu = entries @ scorer
    return softmax(mu, axis=-1, mask=mask)


def aggregate(entries: Tensor, weights: Tensor) -> Tensor:
    """Attention-weighted sum of entries, ``(..., L, d) x (..., L) -> (..., d)``."""
    w = T.reshape(weights, weights.shape + (1,))
    return T.sum_(T.mul(w, entries), axis=-2)


@dataclass
class MrfaOutput:
    refined: dict
    head: dict
    readout: dict
    weights: dict


class MRFA(Module):
    def __init__(self, width: int, iterations: int, alignment: CrossModalAlignment, rng: RngStream):
        if iterations < 1:
            raise ValueError("MRFA needs at least one iteration")
        self.width = width
        self.iterations = iterations
        self.scorer = {m: seeded_uniform_init(rng, (width,)) for m in MODALITIES}
        self.alignment = alignment

    def round(self, blocks: dict, mask: Optional[np.ndarray] = None,
              order: Sequence[str] = MODALITIES) -> MrfaOutput:
        """One synchronous round: read all blocks, then write all blocks."""
        weights = {m: entry_attention(blocks[m].entries, self.scorer[m], mask) for m in MODALITIES}
        readout = {m: aggregate(blocks[m].entries, weights[m]) for m in MODALITIES}
        # entries conditioned on the salient summary of their modality
        sources = {
            m: blocks[m].entries + T.reshape(readout[m], readout[m].shape[:-1] + (1, self.width))
            for m in MODALITIES
        }
        head, refined = {}, {}
        for m in order:
            head[m] = self.alignment.multi_head(m, sources, mask)
            refined[m] = self.alignment.gru_update(m, blocks[m].entries, head[m])
        for m in MODALITIES:
            blocks[m].write_back(refined[m])
        return MrfaOutput(refined, head, readout, weights)

    def __call__(self, filtered: dict, mask: Optional[np.ndarray] = None) -> MrfaOutput:
        blocks = {m: init_memory(m, filtered[m]) for m in MODALITIES}
        out = None
        for _ in range(self.iterations):
            out = self.round(blocks, mask)
        return out
