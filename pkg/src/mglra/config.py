"""Run configuration: every tunable of the pipeline in one flat JSON object."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Union

from .model import ModelConfig
from .train import TrainConfig

SWEEPABLE = {
    "mask_rate": "mask_rate",
    "n_heads": "n_heads",
    "T^F": "mrfa_iterations",
    "TF": "mrfa_iterations",
    "mrfa_iterations": "mrfa_iterations",
    "aleph": "aleph",
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # model
    hidden_dim: int = 100
    filter_width: int = 100
    relation_width: int = 100
    mrfa_iterations: int = 3
    n_heads: int = 10
    head_dim: int = 10
    scale_attention: bool = False
    partner_combine: str = "mean"
    speaker_dim: int = 100
    aleph: float = 0.5
    mask_rate: float = 0.7
    eval_mask: bool = False
    gcn_dim: int = 100
    classifier_hidden: int = 64
    propagation: str = "auto"
    fusion_input: str = "head"
    # training
    learning_rate: float = 1e-4
    weight_decay: float = 5e-5
    batch_size: int = 32
    epochs: int = 70
    max_steps: Optional[int] = None
    seed: int = 0
    # data
    train_features: Optional[str] = None
    val_features: Optional[str] = None
    test_features: Optional[str] = None
    synthetic_spec: Optional[Union[str, dict]] = None
    val_ratio: float = 0.1
    out_dir: str = "runs/default"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        try:
            self.model_config()
            self.train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not 0.0 <= self.val_ratio < 1.0:
            raise ConfigError("val_ratio must lie in [0, 1)")
        if self.synthetic_spec is None and self.train_features is None:
            raise ConfigError("config needs either synthetic_spec or train_features")

    def model_config(self) -> ModelConfig:
        names = {f.name for f in fields(ModelConfig)}
        return ModelConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(obj) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunConfig":
        path = Path(path)
        try:
            obj = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
        cfg = cls.from_dict(obj)
        # relative data paths are resolved against the config file
        for key in ("train_features", "val_features", "test_features"):
            value = getattr(cfg, key)
            if value is not None and not Path(value).is_absolute():
                setattr(cfg, key, str(path.parent / value))
        if isinstance(cfg.synthetic_spec, str) and not Path(cfg.synthetic_spec).is_absolute():
            cfg.synthetic_spec = str(path.parent / cfg.synthetic_spec)
        return cfg

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def with_value(self, param: str, value) -> "RunConfig":
        if param not in SWEEPABLE:
            raise ConfigError(f"unknown sweep parameter {param!r}; choose from {sorted(SWEEPABLE)}")
        key = SWEEPABLE[param]
        obj = self.to_dict()
        obj[key] = int(value) if key in ("n_heads", "mrfa_iterations") else float(value)
        return RunConfig.from_dict(obj)
