"""MLP emotion classifier and cross-entropy objective."""
from __future__ import annotations

import numpy as np

from .numerics import Module, RngStream, Tensor, clip, log, relu, seeded_uniform_init, softmax, take_rows, zeros_param
from .numerics import tensor as T

PROB_FLOOR = 1e-12


class EmotionClassifier(Module):
    def __init__(self, in_dim: int, hidden_dim: int, n_classes: int, rng: RngStream):
        self.w_l = seeded_uniform_init(rng, (in_dim, hidden_dim))
        self.b_l = zeros_param((hidden_dim,))
        self.w_smax = seeded_uniform_init(rng, (hidden_dim, n_classes))
        self.b_smax = zeros_param((n_classes,))

    def __call__(self, x: Tensor) -> Tensor:
        """Class probabilities, one row per input row."""
        hidden = relu(x @ self.w_l + self.b_l)
        return softmax(hidden @ self.w_smax + self.b_smax, axis=-1)


def predict_labels(probs) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    p = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    return np.argmax(p, axis=-1)


class CrossEntropy:
    """Mean negative log-likelihood; probabilities below 1e-12 are clamped and counted."""

    def __init__(self):
        self.clamp_count = 0

    def __call__(self, probs: Tensor, labels: np.ndarray) -> Tensor:
        labels = np.asarray(labels, dtype=np.int64)
        n_classes = probs.shape[-1]
        if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
            raise ValueError(f"labels must lie in [0, {n_classes}), got range [{labels.min()}, {labels.max()}]")
        picked = T.getitem(probs, (np.arange(labels.size), labels))
        low = picked.data < PROB_FLOOR
        if np.any(low):
            self.clamp_count += int(low.sum())
        nll = T.mul(log(clip(picked, PROB_FLOOR, 1.0)), -1.0)
        return T.mean(nll)


def cross_entropy(probs: Tensor, labels: np.ndarray) -> Tensor:
    return CrossEntropy()(probs, labels)
