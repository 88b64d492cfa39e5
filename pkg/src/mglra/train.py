"""Training loop, evaluation and prediction."""
from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .classifier import CrossEntropy, predict_labels
from .data import Dialogue
from .metrics import Metrics, compute_metrics
from .model import MGLRAModel, make_batch
from .numerics import RngStream, no_grad
from .optim import Adam

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 5e-5
    batch_size: int = 32
    epochs: int = 70
    max_steps: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.max_steps is not None and self.max_steps < 0:
            raise ValueError("max_steps must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochLog:
    epoch: int
    steps: int
    train_loss: float
    val_weighted_accuracy: float
    val_weighted_f1: float
    seconds: float


@dataclass
class TrainResult:
    log: list = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_val_f1: Optional[float] = None
    steps: int = 0
    loss_clamps: int = 0


def batches(dialogues: Sequence[Dialogue], batch_size: int, order: Optional[np.ndarray] = None):
    idx = np.arange(len(dialogues)) if order is None else order
    for start in range(0, len(idx), batch_size):
        yield [dialogues[i] for i in idx[start:start + batch_size]]


def _eval_threads() -> int:
    try:
        return max(1, int(os.environ.get("MGLRA_THREADS", "1")))
    except ValueError:
        return 1


def predict_proba(model: MGLRAModel, dialogues: Sequence[Dialogue], batch_size: int = 32,
                  mask_seed: int = 0) -> np.ndarray:
    """Class probabilities for every utterance, dialogue order then utterance order."""
    chunks = list(batches(dialogues, batch_size))

    def run(i_chunk):
        i, chunk = i_chunk
        with no_grad():
            # only consulted when eval-time masking is switched on
            rng = RngStream(mask_seed).substream(f"eval-mask/{i}")
            return model.forward(make_batch(chunk), training=False, rng=rng).probs.data

    threads = _eval_threads()
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, enumerate(chunks)))
    else:
        parts = [run(c) for c in enumerate(chunks)]
    return np.concatenate(parts, axis=0)


def evaluate(model: MGLRAModel, dialogues: Sequence[Dialogue], batch_size: int = 32) -> Metrics:
    probs = predict_proba(model, dialogues, batch_size)
    y_true = np.concatenate([d.labels for d in dialogues])
    return compute_metrics(y_true, predict_labels(probs), model.header.n_classes)


def train(model: MGLRAModel, train_set: Sequence[Dialogue], val_set: Sequence[Dialogue],
          config: TrainConfig, callback=None) -> TrainResult:
    """Run the training loop; on return ``model`` holds the best-validation parameters."""
    config.validate()
    result = TrainResult()
    if config.epochs == 0 or config.max_steps == 0:
        return result
    root = RngStream(config.seed)
    shuffle_rng = root.substream("shuffle")
    mask_rng = root.substream("mask")
    params = model.parameters()
    opt = Adam(params, lr=config.learning_rate, weight_decay=config.weight_decay)
    objective = CrossEntropy()
    best_state = None

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(len(train_set))
        losses, weights = [], []
        for b_idx, chunk in enumerate(batches(train_set, config.batch_size, order)):
            try:
                batch = make_batch(chunk)
                out = model.forward(batch, training=True, rng=mask_rng)
                loss = objective(out.probs, out.labels)
                opt.zero_grad()
                loss.backward()
                opt.step()
            except (ValueError, ArithmeticError, RuntimeError) as exc:
                ids = ", ".join(d.dialogue_id for d in chunk[:5])
                raise TrainingError(f"epoch {epoch}, batch {b_idx} (dialogues {ids}...): {exc}") from exc
            losses.append(loss.item())
            weights.append(batch.n_utterances)
            result.steps += 1
            if config.max_steps is not None and result.steps >= config.max_steps:
                break

        if val_set:
            metrics = evaluate(model, val_set, config.batch_size)
            val_acc, val_f1 = metrics.weighted_accuracy, metrics.weighted_f1
        else:
            val_acc = val_f1 = float("nan")
        entry = EpochLog(epoch, result.steps, float(np.average(losses, weights=weights)),
                         val_acc, val_f1, time.perf_counter() - t0)
        result.log.append(entry)
        log.info("epoch %d loss %.4f val acc %.4f f1 %.4f", epoch, entry.train_loss, val_acc, val_f1)
        if callback is not None:
            callback(entry)
        if val_set and (result.best_val_f1 is None or val_f1 > result.best_val_f1):
            result.best_val_f1 = val_f1
            result.best_epoch = epoch
            best_state = model.state_dict()
        if config.max_steps is not None and result.steps >= config.max_steps:
            break

    if best_state is not None:
        model.load_state_dict(best_state)
    result.loss_clamps = objective.clamp_count
    return result
