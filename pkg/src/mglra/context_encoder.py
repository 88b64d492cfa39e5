"""Per-modality LSTM context encoding."""
from __future__ import annotations

import numpy as np

from .numerics import Module, RngStream, ShapeError, Tensor, concat, seeded_uniform_init, sigmoid, tanh, zeros_param
from .numerics import tensor as T

GATES = ("i", "f", "o", "g")


class LSTMEncoder(Module):
    """Single-layer unidirectional LSTM with zero initial state.

    Gate weights are stored fused along the last axis in the order
    input, forget, output, cell-candidate.
    """

    def __init__(self, d_in: int, d_h: int, rng: RngStream):
        self.d_in = d_in
        self.d_h = d_h
        self.w_x = seeded_uniform_init(rng, (d_in, 4 * d_h))
        self.w_h = seeded_uniform_init(rng, (d_h, 4 * d_h))
        self.b = zeros_param((4 * d_h,))

    def gate_slice(self, gate: str) -> slice:
        k = GATES.index(gate)
        return slice(k * self.d_h, (k + 1) * self.d_h)

    def _gates(self, z: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        n = self.d_h
        i = sigmoid(z[..., 0:n])
        f = sigmoid(z[..., n:2 * n])
        o = sigmoid(z[..., 2 * n:3 * n])
        g = tanh(z[..., 3 * n:4 * n])
        c = f * c + i * g
        return o * tanh(c), c

    def cell(self, x_t: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        return self._gates(x_t @ self.w_x + h @ self.w_h + self.b, c)

    def __call__(self, x) -> Tensor:
        """Encode ``x`` of shape ``(..., L, d_in)`` into ``(..., L, d_h)``.

        Right-padded batches are fine: padding after the last real step
        never influences earlier outputs.
        """
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim < 2 or x.shape[-1] != self.d_in:
            raise ShapeError(f"LSTM expects feature width {self.d_in}, got input shape {x.shape}")
        lead = x.shape[:-2]
        steps = x.shape[-2]
        if steps < 1:
            raise ShapeError("LSTM needs at least one time step")
        # input projection for every step at once
        zx = x @ self.w_x + self.b
        h = Tensor(np.zeros(lead + (self.d_h,)))
        c = Tensor(np.zeros(lead + (self.d_h,)))
        n = self.d_h
        outputs = []
        for t in range(steps):
            h, c = self._gates(zx[..., t, :] + h @ self.w_h, c)
            outputs.append(T.reshape(h, lead + (1, n)))
        return concat(outputs, axis=-2)


class ContextEncoder(Module):
    """One LSTM per modality, all with hidden width ``d_h``."""

    def __init__(self, dims: dict, d_h: int, rng: RngStream):
        self.d_h = d_h
        self.lstm = {m: LSTMEncoder(dims[m], d_h, rng.substream(f"lstm/{m}")) for m in ("text", "audio", "vision")}

    def __call__(self, features: dict) -> dict:
        return {m: self.lstm[m](features[m]) for m in ("text", "audio", "vision")}


class GRUCell(Module):
    """GRU step with hidden state ``h`` and input ``x``.

    ``h' = (1 - z) * h + z * n``: an update gate of 0 keeps the prior state,
    an update gate of 1 takes the candidate.
    """

    def __init__(self, d_in: int, d_h: int, rng: RngStream):
        self.d_in = d_in
        self.d_h = d_h
        self.w_x = seeded_uniform_init(rng, (d_in, 3 * d_h))
        self.w_h = seeded_uniform_init(rng, (d_h, 3 * d_h))
        self.b_x = zeros_param((3 * d_h,))
        self.b_h = zeros_param((3 * d_h,))

    def __call__(self, h: Tensor, x: Tensor) -> Tensor:
        if h.shape[-1] != self.d_h or x.shape[-1] != self.d_in:
            raise ShapeError(f"GRU expects hidden width {self.d_h} and input width {self.d_in}, "
                             f"got {h.shape} and {x.shape}")
        n = self.d_h
        gx = x @ self.w_x + self.b_x
        gh = h @ self.w_h + self.b_h
        r = sigmoid(gx[..., 0:n] + gh[..., 0:n])
        z = sigmoid(gx[..., n:2 * n] + gh[..., n:2 * n])
        cand = tanh(gx[..., 2 * n:] + r * gh[..., 2 * n:])
        return (1.0 - z) * h + z * cand
