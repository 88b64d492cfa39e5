"""Feature files, synthetic conversations and splits.

Feature files are JSON lines. The first line is a header object::

    {"d_t": 100, "d_a": 100, "d_v": 512, "n_classes": 6, "n_speakers": 2,
     "class_names": ["c0", ...]}

and every following line is one utterance::

    {"dialogue_id": "d0", "utterance_index": 0, "speaker_id": 1, "label": 3,
     "text": [...], "audio": [...], "vision": [...]}

Utterances of a dialogue must appear with contiguous indices starting at 0.
"""
from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .numerics import RngStream

log = logging.getLogger(__name__)

MODALITIES = ("text", "audio", "vision")


class DatasetParseError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class SchemaError(ValueError):
    pass


@dataclass
class DatasetHeader:
    d_t: int = 100
    d_a: int = 100
    d_v: int = 512
    n_classes: int = 6
    n_speakers: int = 2
    class_names: list = field(default_factory=list)

    def __post_init__(self):
        for key in ("d_t", "d_a", "d_v", "n_classes", "n_speakers"):
            value = getattr(self, key)
            if isinstance(value, bool) or not isinstance(value, int) or value <= 0:
                raise SchemaError(f"header field {key} must be a positive integer, got {value!r}")
        if not self.class_names:
            self.class_names = [f"class_{c}" for c in range(self.n_classes)]
        if len(self.class_names) != self.n_classes:
            raise SchemaError(f"class_names has {len(self.class_names)} entries, n_classes={self.n_classes}")

    @property
    def dims(self) -> dict:
        return {"text": self.d_t, "audio": self.d_a, "vision": self.d_v}

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class UtteranceFeatures:
    dialogue_id: str
    utterance_index: int
    speaker_id: int
    label: int
    text: np.ndarray
    audio: np.ndarray
    vision: np.ndarray

    def validate(self, header: DatasetHeader) -> None:
        if not 0 <= self.speaker_id < header.n_speakers:
            raise SchemaError(f"{self.dialogue_id}[{self.utterance_index}]: speaker_id {self.speaker_id} "
                              f"outside [0, {header.n_speakers})")
        if not 0 <= self.label < header.n_classes:
            raise SchemaError(f"{self.dialogue_id}[{self.utterance_index}]: label {self.label} "
                              f"outside [0, {header.n_classes})")
        for name, width in header.dims.items():
            vec = getattr(self, name)
            if vec.ndim != 1 or vec.shape[0] != width:
                raise SchemaError(f"{self.dialogue_id}[{self.utterance_index}]: {name} has length "
                                  f"{vec.shape[0] if vec.ndim == 1 else vec.shape}, header declares {width}")
            if not np.all(np.isfinite(vec)):
                raise SchemaError(f"{self.dialogue_id}[{self.utterance_index}]: non-finite {name} value")

    def to_json(self) -> dict:
        return {
            "dialogue_id": self.dialogue_id,
            "utterance_index": self.utterance_index,
            "speaker_id": self.speaker_id,
            "label": self.label,
            "text": self.text.tolist(),
            "audio": self.audio.tolist(),
            "vision": self.vision.tolist(),
        }


@dataclass
class Dialogue:
    dialogue_id: str
    utterances: list

    def __post_init__(self):
        if not self.utterances:
            raise SchemaError(f"dialogue {self.dialogue_id} is empty")
        for i, u in enumerate(self.utterances):
            if u.utterance_index != i:
                raise SchemaError(f"dialogue {self.dialogue_id}: utterance indices are not contiguous from 0 "
                                  f"(position {i} holds index {u.utterance_index})")
            if u.dialogue_id != self.dialogue_id:
                raise SchemaError(f"utterance tagged {u.dialogue_id} inside dialogue {self.dialogue_id}")

    def __len__(self) -> int:
        return len(self.utterances)

    @property
    def labels(self) -> np.ndarray:
        return np.array([u.label for u in self.utterances], dtype=np.int64)

    @property
    def speakers(self) -> np.ndarray:
        return np.array([u.speaker_id for u in self.utterances], dtype=np.int64)

    def features(self, modality: str) -> np.ndarray:
        return np.stack([getattr(u, modality) for u in self.utterances])


def _utterance_from_json(obj: dict, line_no: int) -> UtteranceFeatures:
    try:
        return UtteranceFeatures(
            dialogue_id=str(obj["dialogue_id"]),
            utterance_index=int(obj["utterance_index"]),
            speaker_id=int(obj["speaker_id"]),
            label=int(obj["label"]),
            text=np.asarray(obj["text"], dtype=np.float64),
            audio=np.asarray(obj["audio"], dtype=np.float64),
            vision=np.asarray(obj["vision"], dtype=np.float64),
        )
    except KeyError as exc:
        raise DatasetParseError(line_no, f"missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise DatasetParseError(line_no, f"bad value: {exc}") from None


def load_dataset(path: Union[str, Path]) -> tuple[DatasetHeader, list[Dialogue]]:
    path = Path(path)
    header = None
    groups: dict[str, list[UtteranceFeatures]] = {}
    with path.open() as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetParseError(line_no, f"invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise DatasetParseError(line_no, "expected a JSON object")
            if header is None:
                try:
                    header = DatasetHeader(**obj)
                except TypeError as exc:
                    raise DatasetParseError(line_no, f"bad header: {exc}") from None
                continue
            utt = _utterance_from_json(obj, line_no)
            utt.validate(header)
            groups.setdefault(utt.dialogue_id, []).append(utt)
    if header is None:
        raise DatasetParseError(0, "empty file, header missing")
    dialogues = []
    for did, utts in groups.items():
        utts.sort(key=lambda u: u.utterance_index)
        dialogues.append(Dialogue(did, utts))
    return header, dialogues


def save_dataset(path: Union[str, Path], header: DatasetHeader, dialogues: Iterable[Dialogue]) -> None:
    # json uses repr() for floats, which round-trips float64 exactly
    with Path(path).open("w") as fh:
        fh.write(json.dumps(header.to_json()) + "\n")
        for d in dialogues:
            for u in d.utterances:
                fh.write(json.dumps(u.to_json()) + "\n")


def label_distribution(dialogues: Sequence[Dialogue]) -> dict[int, int]:
    counts = Counter(u.label for d in dialogues for u in d.utterances)
    if not counts:
        raise ValueError("label_distribution needs at least one utterance")
    return dict(sorted(counts.items()))


@dataclass
class SyntheticSpec:
    n_classes: int = 6
    n_speakers: int = 2
    class_mean_separation: float = 4.0
    noise_sigma: float = 1.0
    dialogues_per_split: tuple = (200, 20, 40)
    utterances_per_dialogue: int = 10
    seed: int = 0
    d_t: int = 100
    d_a: int = 100
    d_v: int = 512

    def __post_init__(self):
        self.dialogues_per_split = tuple(int(n) for n in self.dialogues_per_split)
        if len(self.dialogues_per_split) != 3 or min(self.dialogues_per_split) <= 0:
            raise ValueError("dialogues_per_split needs three positive counts (train, val, test)")
        for key in ("n_classes", "n_speakers", "utterances_per_dialogue", "d_t", "d_a", "d_v"):
            if getattr(self, key) <= 0:
                raise ValueError(f"{key} must be positive")
        if self.class_mean_separation <= 0:
            raise ValueError("class_mean_separation must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")

    @classmethod
    def from_json(cls, obj: dict) -> "SyntheticSpec":
        return cls(**obj)

    def to_json(self) -> dict:
        out = asdict(self)
        out["dialogues_per_split"] = list(self.dialogues_per_split)
        return out

    def header(self) -> DatasetHeader:
        return DatasetHeader(self.d_t, self.d_a, self.d_v, self.n_classes, self.n_speakers)


SPLITS = ("train", "val", "test")


def class_means(spec: SyntheticSpec) -> dict[str, np.ndarray]:
    """Per-modality ``n_classes x d`` matrix of class means."""
    rng = RngStream(spec.seed).substream("synth/means")
    scale = spec.class_mean_separation * spec.noise_sigma
    out = {}
    for name, width in spec.header().dims.items():
        directions = rng.normal(size=(spec.n_classes, width))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        out[name] = scale * directions
    return out


def generate_synthetic(spec: SyntheticSpec) -> tuple[DatasetHeader, dict[str, list[Dialogue]]]:
    """Gaussian class clusters per modality; a pure function of ``spec``."""
    means = class_means(spec)
    root = RngStream(spec.seed)
    splits = {}
    for split, count in zip(SPLITS, spec.dialogues_per_split):
        dialogues = []
        for k in range(count):
            did = f"{split}_{k:05d}"
            rng = root.substream(f"synth/{did}")
            labels = rng.integers(0, spec.n_classes, size=spec.utterances_per_dialogue)
            utts = []
            for i, y in enumerate(labels):
                vecs = {
                    name: means[name][y] + spec.noise_sigma * rng.normal(size=means[name].shape[1])
                    for name in MODALITIES
                }
                utts.append(UtteranceFeatures(did, i, i % spec.n_speakers, int(y), **vecs))
            dialogues.append(Dialogue(did, utts))
        splits[split] = dialogues
    return spec.header(), splits


def split_train_val(dialogues: Sequence[Dialogue], val_ratio: float = 0.1, seed: int = 0):
    """Dialogue-level random split of a combined train+val list."""
    if not 0.0 <= val_ratio < 1.0:
        raise ValueError("val_ratio must be in [0, 1)")
    order = RngStream(seed).substream("split").permutation(len(dialogues))
    n_val = int(round(val_ratio * len(dialogues)))
    if val_ratio > 0 and n_val == 0 and len(dialogues) > 1:
        n_val = 1
    val = [dialogues[i] for i in sorted(order[:n_val])]
    train = [dialogues[i] for i in sorted(order[n_val:])]
    return train, val


def check_dialogues(dialogues, header: Optional[DatasetHeader] = None) -> list[Dialogue]:
    """Validate estimator input: a nonempty sequence of :class:`Dialogue`."""
    if isinstance(dialogues, Dialogue):
        dialogues = [dialogues]
    dialogues = list(dialogues)
    if not dialogues:
        raise ValueError("expected at least one dialogue")
    for d in dialogues:
        if not isinstance(d, Dialogue):
            raise TypeError(f"expected Dialogue instances, got {type(d).__name__}")
        if header is not None:
            for u in d.utterances:
                u.validate(header)
    return dialogues
