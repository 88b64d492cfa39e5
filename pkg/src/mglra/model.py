"""The assembled pipeline: context LSTMs, graph filter, MRFA, masked GCN, MLP."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence

import numpy as np

from .classifier import EmotionClassifier
from .context_encoder import ContextEncoder
from .crossmodal_attention import COMBINE_MODES, MODALITIES, CrossModalAlignment
from .data import DatasetHeader, Dialogue
from .fusion_graph import PROPAGATION_MODES, ConversationGraph, MaskedGCN, SpeakerTable, apply_mask, build_graph
from .graph_filter import GraphFilter
from .mrfa import MRFA
from .numerics import Module, RngStream, Tensor, concat, segment_sum, take_rows
from .numerics import tensor as T

FUSION_INPUTS = ("head", "refined")


@dataclass
class ModelConfig:
    hidden_dim: int = 100  # LSTM width, shared by all modalities
    filter_width: int = 100  # node-value width of the filter graph
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

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for key in ("hidden_dim", "filter_width", "relation_width", "mrfa_iterations", "n_heads", "head_dim",
                    "speaker_dim", "gcn_dim", "classifier_hidden"):
            value = getattr(self, key)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(f"{key} must be a positive integer, got {value!r}")
        if not 0.0 < self.aleph <= 1.0:
            raise ValueError(f"aleph must lie in (0, 1], got {self.aleph}")
        if not 0.0 <= self.mask_rate < 1.0:
            raise ValueError(f"mask_rate must lie in [0, 1), got {self.mask_rate}")
        if self.partner_combine not in COMBINE_MODES:
            raise ValueError(f"partner_combine must be one of {COMBINE_MODES}")
        if self.propagation not in PROPAGATION_MODES:
            raise ValueError(f"propagation must be one of {PROPAGATION_MODES}")
        if self.fusion_input not in FUSION_INPUTS:
            raise ValueError(f"fusion_input must be one of {FUSION_INPUTS}")

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in obj.items() if k in names})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Batch:
    dialogue_ids: list
    lengths: np.ndarray
    mask: np.ndarray  # (B, L) True on real utterances
    features: dict  # modality -> (B, L, d), zero padded
    speakers: np.ndarray  # (B, L)
    labels: np.ndarray  # (B, L), -1 on padding

    @property
    def n_utterances(self) -> int:
        return int(self.lengths.sum())

    def flat_labels(self) -> np.ndarray:
        return self.labels[self.mask]


def make_batch(dialogues: Sequence[Dialogue]) -> Batch:
    lengths = np.array([len(d) for d in dialogues], dtype=np.int64)
    B, L = len(dialogues), int(lengths.max())
    mask = np.arange(L)[None, :] < lengths[:, None]
    features = {}
    for m in MODALITIES:
        width = getattr(dialogues[0].utterances[0], m).shape[0]
        arr = np.zeros((B, L, width))
        for b, d in enumerate(dialogues):
            arr[b, : len(d)] = d.features(m)
        features[m] = arr
    speakers = np.zeros((B, L), dtype=np.int64)
    labels = np.full((B, L), -1, dtype=np.int64)
    for b, d in enumerate(dialogues):
        speakers[b, : len(d)] = d.speakers
        labels[b, : len(d)] = d.labels
    return Batch([d.dialogue_id for d in dialogues], lengths, mask, features, speakers, labels)


@dataclass
class NodeLayout:
    """Index maps between padded ``(B, L)`` positions, graph nodes and utterances.

    Graph nodes are ordered dialogue-major, then modality, then utterance.
    """

    node_dialogue: np.ndarray
    node_modality: np.ndarray
    node_utterance: np.ndarray
    node_source: np.ndarray  # row in the stacked (3*B*L, D) modality tensor
    node_speaker: np.ndarray
    node_label: np.ndarray
    node_to_utt: np.ndarray  # utterance row of each node
    n_utterances: int


def node_layout(batch: Batch) -> NodeLayout:
    B, L = batch.mask.shape
    dia, mod, utt, src, spk, lab, n2u = [], [], [], [], [], [], []
    offsets = np.concatenate([[0], np.cumsum(batch.lengths)])
    for b in range(B):
        n = int(batch.lengths[b])
        for k in range(len(MODALITIES)):
            pos = np.arange(n)
            dia.append(np.full(n, b))
            mod.append(np.full(n, k))
            utt.append(pos)
            src.append(k * B * L + b * L + pos)
            spk.append(batch.speakers[b, :n])
            lab.append(batch.labels[b, :n])
            n2u.append(offsets[b] + pos)
    cat = np.concatenate
    return NodeLayout(cat(dia), cat(mod), cat(utt), cat(src), cat(spk), cat(lab), cat(n2u), int(offsets[-1]))


@dataclass
class ForwardResult:
    probs: Tensor  # (U, C), utterances in batch order
    labels: np.ndarray  # (U,)
    node_embeddings: Tensor  # (N, D_g)
    utterance_embeddings: Tensor  # (U, D_g)
    graph: ConversationGraph
    layout: NodeLayout


class MGLRAModel(Module):
    def __init__(self, config: ModelConfig, header: DatasetHeader, seed: int = 0):
        config.validate()
        self.config = config
        self.header = header
        rng = RngStream(seed).substream("init")
        c = config
        self.encoder = ContextEncoder(header.dims, c.hidden_dim, rng.substream("encoder"))
        self.filter = GraphFilter(c.hidden_dim, c.filter_width, c.relation_width, rng.substream("filter"))
        alignment = CrossModalAlignment(c.filter_width, c.n_heads, c.head_dim, rng.substream("alignment"),
                                        scale=c.scale_attention, combine=c.partner_combine)
        self.mrfa = MRFA(c.filter_width, c.mrfa_iterations, alignment, rng.substream("mrfa"))
        self.feature_dim = alignment.head_width if c.fusion_input == "head" else c.filter_width
        self.speakers = SpeakerTable(header.n_speakers, c.speaker_dim, self.feature_dim, rng.substream("speaker"))
        self.gcn = MaskedGCN(self.feature_dim, c.gcn_dim, rng.substream("gcn"), c.propagation)
        self.classifier = EmotionClassifier(c.gcn_dim, c.classifier_hidden, header.n_classes,
                                            rng.substream("classifier"))

    def node_features(self, batch: Batch) -> tuple[Tensor, NodeLayout]:
        """Aligned per-node features before the speaker embedding, ``(N, D_f)``."""
        ctx = self.encoder({m: Tensor(batch.features[m]) for m in MODALITIES})
        filtered = self.filter(ctx)
        aligned = self.mrfa(filtered, batch.mask)
        source = aligned.head if self.config.fusion_input == "head" else aligned.refined
        B, L = batch.mask.shape
        width = source[MODALITIES[0]].shape[-1]
        stacked = concat([T.reshape(source[m], (B * L, width)) for m in MODALITIES], axis=0)
        layout = node_layout(batch)
        return take_rows(stacked, layout.node_source), layout

    def forward(self, batch: Batch, training: bool = False, rng: Optional[RngStream] = None) -> ForwardResult:
        x, layout = self.node_features(batch)
        x_s = self.speakers(x, layout.node_speaker)
        graph = build_graph(x_s, layout.node_dialogue, layout.node_modality, layout.node_utterance,
                            self.config.aleph)
        masking = training or self.config.eval_mask
        if masking and self.config.mask_rate > 0.0:
            if rng is None:
                raise ValueError("masking needs an rng stream")
            graph = apply_mask(graph, rng, self.config.mask_rate, self.gcn.mask_token, training=True)
        nodes = self.gcn(graph)
        per_utt = T.mul(segment_sum(nodes, layout.node_to_utt, layout.n_utterances), 1.0 / len(MODALITIES))
        probs = self.classifier(per_utt)
        return ForwardResult(probs, batch.flat_labels(), nodes, per_utt, graph, layout)

    __call__ = forward
