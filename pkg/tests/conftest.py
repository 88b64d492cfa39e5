import numpy as np
import pytest

from mglra.data import DatasetHeader, Dialogue, SyntheticSpec, UtteranceFeatures, generate_synthetic
from mglra.model import ModelConfig

TINY_DIMS = {"d_t": 6, "d_a": 5, "d_v": 7}


def tiny_config(**overrides) -> ModelConfig:
    base = dict(hidden_dim=8, filter_width=8, relation_width=8, n_heads=2, head_dim=4, speaker_dim=8,
                gcn_dim=8, classifier_hidden=8, mrfa_iterations=2)
    base.update(overrides)
    return ModelConfig(**base)


def tiny_spec(**overrides) -> SyntheticSpec:
    base = dict(n_classes=3, dialogues_per_split=(6, 2, 3), utterances_per_dialogue=4, seed=1, **TINY_DIMS)
    base.update(overrides)
    return SyntheticSpec(**base)


def make_dialogue(dialogue_id, n_utt, header: DatasetHeader, rng, labels=None):
    utts = []
    for i in range(n_utt):
        utts.append(UtteranceFeatures(
            dialogue_id=dialogue_id,
            utterance_index=i,
            speaker_id=i % header.n_speakers,
            label=int(labels[i]) if labels is not None else int(rng.integers(header.n_classes)),
            text=rng.normal(size=header.d_t),
            audio=rng.normal(size=header.d_a),
            vision=rng.normal(size=header.d_v),
        ))
    return Dialogue(dialogue_id, utts)


@pytest.fixture
def tiny_data():
    return generate_synthetic(tiny_spec())


@pytest.fixture
def tiny_header():
    return DatasetHeader(n_classes=3, **TINY_DIMS)
