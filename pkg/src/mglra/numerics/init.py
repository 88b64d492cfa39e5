from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np

from .rng import RngStream
from .tensor import Tensor


def glorot_scale(shape) -> float:
    if len(shape) >= 2:
        fan_in, fan_out = shape[-2], shape[-1]
    else:
        fan_in, fan_out = shape[0], 1
    return math.sqrt(6.0 / (fan_in + fan_out))


def seeded_uniform_init(rng: RngStream, shape, scale: Optional[float] = None, name: Optional[str] = None) -> Tensor:
    """Trainable tensor with entries uniform in ``[-scale, scale]``.

    ``scale`` defaults to the Glorot bound ``sqrt(6 / (fan_in + fan_out))``.
    """
    shape = tuple(int(s) for s in shape)
    if scale is None:
        scale = glorot_scale(shape)
    if scale <= 0:
        raise ValueError("scale must be positive")
    return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True, name=name)


def zeros_param(shape, name: Optional[str] = None) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


class Module:
    """Parameter container; parameters and sub-modules are plain attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + key + ".")
            elif isinstance(value, dict):
                for k, v in value.items():
                    if isinstance(v, Module):
                        yield from v.named_parameters(f"{prefix}{key}.{k}.")
                    elif isinstance(v, Tensor) and v.requires_grad:
                        yield f"{prefix}{key}.{k}", v

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: expected shape {p.shape}, got {arr.shape}")
            p.data = arr.copy()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None
