"""scikit-learn compatible wrapper around the pipeline.

``X`` is a sequence of :class:`~mglra.data.Dialogue`; labels travel inside the
dialogues, so ``y`` is accepted for API compatibility and ignored.
Predictions are flat per-utterance arrays in dialogue, then utterance order.
"""
from __future__ import annotations

from dataclasses import fields
from pathlib import Path
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import __version__
from .classifier import predict_labels
from .data import DatasetHeader, Dialogue, check_dialogues, split_train_val
from .metrics import Metrics, compute_metrics
from .model import MGLRAModel, ModelConfig, make_batch
from .numerics import no_grad
from .serialization import ModelFormatError, load_params, save_params
from .train import TrainConfig, batches, evaluate, predict_proba, train


def infer_header(dialogues, n_classes: Optional[int] = None, n_speakers: Optional[int] = None) -> DatasetHeader:
    first = dialogues[0].utterances[0]
    labels = [u.label for d in dialogues for u in d.utterances]
    speakers = [u.speaker_id for d in dialogues for u in d.utterances]
    return DatasetHeader(
        d_t=first.text.shape[0],
        d_a=first.audio.shape[0],
        d_v=first.vision.shape[0],
        n_classes=n_classes or max(labels) + 1,
        n_speakers=n_speakers or max(speakers) + 1,
    )


class MGLRAClassifier(ClassifierMixin, BaseEstimator):
    def __init__(
        self,
        hidden_dim=100,
        filter_width=100,
        relation_width=100,
        mrfa_iterations=3,
        n_heads=10,
        head_dim=10,
        scale_attention=False,
        partner_combine="mean",
        speaker_dim=100,
        aleph=0.5,
        mask_rate=0.7,
        eval_mask=False,
        gcn_dim=100,
        classifier_hidden=64,
        propagation="auto",
        fusion_input="head",
        learning_rate=1e-4,
        weight_decay=5e-5,
        batch_size=32,
        epochs=70,
        max_steps=None,
        val_ratio=0.1,
        seed=0,
    ):
        self.hidden_dim = hidden_dim
        self.filter_width = filter_width
        self.relation_width = relation_width
        self.mrfa_iterations = mrfa_iterations
        self.n_heads = n_heads
        self.head_dim = head_dim
        self.scale_attention = scale_attention
        self.partner_combine = partner_combine
        self.speaker_dim = speaker_dim
        self.aleph = aleph
        self.mask_rate = mask_rate
        self.eval_mask = eval_mask
        self.gcn_dim = gcn_dim
        self.classifier_hidden = classifier_hidden
        self.propagation = propagation
        self.fusion_input = fusion_input
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.max_steps = max_steps
        self.val_ratio = val_ratio
        self.seed = seed

    def _model_config(self) -> ModelConfig:
        params = self.get_params()
        return ModelConfig(**{f.name: params[f.name] for f in fields(ModelConfig)})

    def _train_config(self) -> TrainConfig:
        params = self.get_params()
        return TrainConfig(**{f.name: params[f.name] for f in fields(TrainConfig)})

    def fit(self, X, y=None, X_val=None, header: Optional[DatasetHeader] = None, callback=None):
        """Train on dialogues ``X``; ``X_val`` defaults to a ``val_ratio`` split of ``X``."""
        X = check_dialogues(X, header)
        if X_val is None and self.val_ratio > 0 and len(X) > 1:
            X, X_val = split_train_val(X, self.val_ratio, self.seed)
        X_val = check_dialogues(X_val, header) if X_val else []
        self.header_ = header or infer_header(list(X) + list(X_val))
        self.model_ = MGLRAModel(self._model_config(), self.header_, seed=self.seed)
        self.train_result_ = train(self.model_, X, X_val, self._train_config(), callback=callback)
        self.classes_ = np.arange(self.header_.n_classes)
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_dialogues(X, self.header_)
        return predict_proba(self.model_, X, self.batch_size)

    def predict(self, X) -> np.ndarray:
        return predict_labels(self.predict_proba(X))

    def transform(self, X) -> np.ndarray:
        """Per-utterance fused embeddings (mean of the three modality nodes)."""
        check_is_fitted(self, "model_")
        X = check_dialogues(X, self.header_)
        with no_grad():
            parts = [self.model_.forward(make_batch(chunk)).utterance_embeddings.data
                     for chunk in batches(X, self.batch_size)]
        return np.concatenate(parts, axis=0)

    def evaluate(self, X) -> Metrics:
        check_is_fitted(self, "model_")
        return evaluate(self.model_, check_dialogues(X, self.header_), self.batch_size)

    def score(self, X, y=None, sample_weight=None) -> float:
        """Weighted accuracy over all utterances of ``X``."""
        X = check_dialogues(X)
        y_true = np.concatenate([d.labels for d in X]) if y is None else np.asarray(y)
        return compute_metrics(y_true, self.predict(X), self.header_.n_classes).weighted_accuracy

    # persistence

    def save(self, path) -> None:
        check_is_fitted(self, "model_")
        meta = {
            "code_version": __version__,
            "params": self.get_params(),
            "header": self.header_.to_json(),
        }
        save_params(path, meta, self.model_.state_dict())

    @classmethod
    def load(cls, path) -> "MGLRAClassifier":
        meta, state = load_params(path)
        for key in ("code_version", "params", "header"):
            if key not in meta:
                raise ModelFormatError(f"{path}: model metadata lacks {key!r}")
        if meta["code_version"] != __version__:
            raise ModelFormatError(f"{path}: written by mglra {meta['code_version']}, this is {__version__}")
        est = cls(**meta["params"])
        est.header_ = DatasetHeader(**meta["header"])
        est.model_ = MGLRAModel(est._model_config(), est.header_, seed=est.seed)
        try:
            est.model_.load_state_dict(state)
        except (KeyError, ValueError) as exc:
            raise ModelFormatError(f"{path}: parameters do not match this code version ({exc})") from None
        est.classes_ = np.arange(est.header_.n_classes)
        return est
