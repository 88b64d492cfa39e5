"""Central-difference gradient checking against the tape."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Optional

import numpy as np

from .tensor import Tensor, no_grad


@dataclass(frozen=True)
class GradCheckReport:
    parameter_name: str
    max_relative_error: float
    passed: bool
    entries_checked: int = 0


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)`` entrywise.

    The floor keeps entries whose true gradient is ~0 from amplifying
    finite-difference roundoff into a large relative error.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    eps: float = 1e-5,
    tol: float = 1e-4,
    floor: float = 1e-6,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> list[GradCheckReport]:
    """Compare tape gradients of the scalar ``f()`` to central differences.

    ``f`` must recompute the loss from the current values of ``params``
    (perturbed in place) and must be deterministic. With ``max_entries`` set,
    that many entries per parameter are sampled instead of all of them.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    for p in params.values():
        p.grad = None
    loss = f()
    loss.backward()
    analytic = {name: (p.grad if p.grad is not None else np.zeros_like(p.data)).copy() for name, p in params.items()}

    reports = []
    with no_grad():
        for name, p in params.items():
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                gen = rng if rng is not None else np.random.default_rng(0)
                idx = np.sort(gen.choice(flat.size, size=max_entries, replace=False))
            numeric = np.empty(idx.size)
            for n, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + eps
                up = f().item()
                flat[i] = orig - eps
                down = f().item()
                flat[i] = orig
                numeric[n] = (up - down) / (2.0 * eps)
            err = relative_error(analytic[name].reshape(-1)[idx], numeric, floor)
            worst = float(err.max()) if err.size else 0.0
            reports.append(GradCheckReport(name, worst, worst <= tol, int(idx.size)))
    return reports
