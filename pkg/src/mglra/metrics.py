"""Weighted accuracy / F1 and confusion matrices."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np


@dataclass
class Metrics:
    weighted_accuracy: float
    weighted_f1: float
    precision: list
    recall: list
    f1: list
    support: list
    confusion_matrix: list

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "Metrics":
        return cls(**obj)


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    """Rows are true labels, columns predicted labels."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return cm


def metrics_from_confusion(cm) -> Metrics:
    cm = np.asarray(cm, dtype=np.int64)
    total = cm.sum()
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    # 0/0 is reported as 0
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, support, out=np.zeros_like(tp), where=support > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    weights = support / total if total else np.zeros_like(tp)
    return Metrics(
        weighted_accuracy=float(tp.sum() / total) if total else 0.0,
        weighted_f1=float(np.sum(weights * f1)),
        precision=precision.tolist(),
        recall=recall.tolist(),
        f1=f1.tolist(),
        support=support.tolist(),
        confusion_matrix=cm.tolist(),
    )


def compute_metrics(y_true, y_pred, n_classes: int) -> Metrics:
    return metrics_from_confusion(confusion_matrix(y_true, y_pred, n_classes))


def write_metrics_json(path, metrics: Metrics) -> None:
    Path(path).write_text(json.dumps(metrics.to_json(), indent=2, sort_keys=True) + "\n")


def write_confusion_csv(path, metrics: Metrics, class_names=None) -> None:
    cm = metrics.confusion_matrix
    names = class_names or [str(i) for i in range(len(cm))]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred"] + list(names))
        for name, row in zip(names, cm):
            w.writerow([name] + list(row))
