"""Masked graph learning with recurrent alignment for multimodal emotion recognition."""

__version__ = "0.1.0"

from .data import (  # noqa: E402
    DatasetHeader,
    Dialogue,
    SyntheticSpec,
    UtteranceFeatures,
    generate_synthetic,
    label_distribution,
    load_dataset,
    save_dataset,
)
from .estimator import MGLRAClassifier  # noqa: E402
from .metrics import Metrics, compute_metrics  # noqa: E402
from .model import MGLRAModel, ModelConfig  # noqa: E402
from .train import TrainConfig, evaluate, train  # noqa: E402

__all__ = [
    "DatasetHeader",
    "Dialogue",
    "MGLRAClassifier",
    "MGLRAModel",
    "Metrics",
    "ModelConfig",
    "SyntheticSpec",
    "TrainConfig",
    "UtteranceFeatures",
    "__version__",
    "compute_metrics",
    "evaluate",
    "generate_synthetic",
    "label_distribution",
    "load_dataset",
    "save_dataset",
    "train",
]
