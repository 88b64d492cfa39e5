"""File-level workflows behind the CLI: generate, train, evaluate, sweep, inspect."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import RunConfig
from .crossmodal_attention import MODALITIES
from .data import SPLITS, SyntheticSpec, generate_synthetic, load_dataset, save_dataset, split_train_val
from .estimator import MGLRAClassifier
from .metrics import Metrics, write_confusion_csv, write_metrics_json
from .model import make_batch
from .numerics import no_grad
from .train import batches

log = logging.getLogger(__name__)


def load_spec(spec) -> SyntheticSpec:
    if isinstance(spec, SyntheticSpec):
        return spec
    if isinstance(spec, dict):
        return SyntheticSpec.from_json(spec)
    path = Path(spec)
    return SyntheticSpec.from_json(json.loads(path.read_text()))


def generate(spec, out_dir) -> dict:
    """Write train/val/test JSONL files and a manifest; returns the manifest."""
    spec = load_spec(spec)
    header, splits = generate_synthetic(spec)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for split in SPLITS:
        path = out / f"{split}.jsonl"
        save_dataset(path, header, splits[split])
        files[split] = {"path": path.name, "sha256": hashlib.sha256(path.read_bytes()).hexdigest(),
                        "dialogues": len(splits[split])}
    manifest = {"spec": spec.to_json(), "seed": spec.seed, "files": files}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_splits(cfg: RunConfig):
    if cfg.synthetic_spec is not None:
        header, splits = generate_synthetic(load_spec(cfg.synthetic_spec))
        return header, splits["train"], splits["val"], splits["test"]
    header, train_set = load_dataset(cfg.train_features)
    if cfg.val_features:
        _, val_set = load_dataset(cfg.val_features)
    else:
        train_set, val_set = split_train_val(train_set, cfg.val_ratio, cfg.seed)
    test_set = load_dataset(cfg.test_features)[1] if cfg.test_features else []
    return header, train_set, val_set, test_set


def estimator_from_config(cfg: RunConfig) -> MGLRAClassifier:
    params = MGLRAClassifier().get_params()
    return MGLRAClassifier(**{k: v for k, v in cfg.to_dict().items() if k in params})


def fit_and_score(cfg: RunConfig, callback=None):
    header, train_set, val_set, test_set = load_splits(cfg)
    est = estimator_from_config(cfg)
    est.fit(train_set, X_val=val_set, header=header, callback=callback)
    eval_set = test_set or val_set
    metrics = est.evaluate(eval_set) if eval_set else None
    return est, metrics, (header, train_set, val_set, test_set)


def write_epoch_log(path, entries) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "steps", "train_loss", "val_weighted_accuracy", "val_weighted_f1", "seconds"])
        for e in entries:
            w.writerow([e.epoch, e.steps, repr(e.train_loss), repr(e.val_weighted_accuracy),
                        repr(e.val_weighted_f1), f"{e.seconds:.3f}"])


def train_run(cfg: RunConfig, out_dir: Optional[str] = None) -> tuple[MGLRAClassifier, Optional[Metrics]]:
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    est, metrics, (header, _, _, test_set) = fit_and_score(cfg)
    cfg.save(out / "config.json")
    est.save(out / "model.bin")
    write_epoch_log(out / "epochs.csv", est.train_result_.log)
    if test_set:
        save_dataset(out / "test.jsonl", header, test_set)
    if metrics is not None:
        write_metrics_json(out / "metrics.json", metrics)
        write_confusion_csv(out / "confusion.csv", metrics, header.class_names)
    return est, metrics


def evaluate_run(model_path, features_path, out_dir=None) -> Metrics:
    est = MGLRAClassifier.load(model_path)
    _, dialogues = load_dataset(features_path)
    metrics = est.evaluate(dialogues)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics_json(out / "metrics.json", metrics)
        write_confusion_csv(out / "confusion.csv", metrics, est.header_.class_names)
    return metrics


SWEEP_COLUMNS = ["value", "weighted_accuracy", "weighted_f1", "wall_seconds"]


def dedupe(values: Sequence) -> list:
    seen, out = set(), []
    for v in values:
        if v in seen:
            log.warning("duplicate sweep value %r dropped", v)
            continue
        seen.add(v)
        out.append(v)
    return out


def sweep(cfg: RunConfig, param: str, values: Sequence, out_csv) -> list[dict]:
    """One train/eval per value with the shared seed; one CSV row per value."""
    values = dedupe(list(values))
    configs = [cfg.with_value(param, v) for v in values]  # validate all before running any
    rows = []
    for value, run_cfg in zip(values, configs):
        t0 = time.perf_counter()
        _, metrics = fit_and_score(run_cfg)[:2]
        rows.append({
            "value": value,
            "weighted_accuracy": metrics.weighted_accuracy if metrics else float("nan"),
            "weighted_f1": metrics.weighted_f1 if metrics else float("nan"),
            "wall_seconds": time.perf_counter() - t0,
        })
        log.info("sweep %s=%s acc %.4f f1 %.4f", param, value, rows[-1]["weighted_accuracy"], rows[-1]["weighted_f1"])
    out_csv = Path(out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    with out_csv.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    return rows


def inspect(model_path, features_path, out_dir) -> dict:
    """Dump graph nodes/edges, node embeddings and the confusion matrix."""
    est = MGLRAClassifier.load(model_path)
    _, dialogues = load_dataset(features_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics = est.evaluate(dialogues)
    write_confusion_csv(out / "confusion.csv", metrics, est.header_.class_names)
    write_metrics_json(out / "metrics.json", metrics)

    n_nodes = n_edges = 0
    with (out / "graph_nodes.csv").open("w", newline="") as fn, \
            (out / "graph_edges.csv").open("w", newline="") as fe, \
            (out / "embeddings.tsv").open("w") as ft:
        nodes_w, edges_w = csv.writer(fn), csv.writer(fe)
        nodes_w.writerow(["node", "dialogue_id", "modality", "utterance_index", "speaker_id", "label", "masked"])
        edges_w.writerow(["dialogue_id", "source", "target", "kind", "weight", "masked"])
        for chunk in batches(dialogues, est.batch_size):
            batch = make_batch(chunk)
            with no_grad():
                res = est.model_.forward(batch, training=False)
            g, lay = res.graph, res.layout
            names = [f"{batch.dialogue_ids[d]}:{MODALITIES[m]}:{u}"
                     for d, m, u in zip(lay.node_dialogue, lay.node_modality, lay.node_utterance)]
            for i, name in enumerate(names):
                nodes_w.writerow([name, batch.dialogue_ids[lay.node_dialogue[i]], MODALITIES[lay.node_modality[i]],
                                  int(lay.node_utterance[i]), int(lay.node_speaker[i]), int(lay.node_label[i]),
                                  int(g.node_mask[i])])
                emb = res.node_embeddings.data[i]
                ft.write("\t".join([name, str(int(lay.node_label[i]))] + [repr(float(v)) for v in emb]) + "\n")
            weights = g.weights.data
            for e in range(g.n_edges):
                r, c = g.rows[e], g.cols[e]
                edges_w.writerow([batch.dialogue_ids[lay.node_dialogue[r]], names[r], names[c],
                                  "inter" if g.inter[e] else "intra", repr(float(weights[e])), int(g.edge_mask[e])])
            n_nodes += g.n_nodes
            n_edges += g.n_edges
    return {"nodes": n_nodes, "edges": n_edges, "metrics": asdict(metrics)}
