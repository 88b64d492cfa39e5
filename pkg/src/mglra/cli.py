"""Command line entry point.

Exit codes: 0 success, 1 contract or validation failure, 2 I/O or usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import SWEEPABLE, ConfigError, RunConfig
from .data import DatasetParseError, SchemaError
from .errors import ContractError
from .numerics import NonFiniteError, ShapeError
from .serialization import ModelFormatError
from .train import TrainingError

EXIT_OK, EXIT_CONTRACT, EXIT_IO = 0, 1, 2


def _parse_values(raw: str) -> list:
    out = []
    for tok in raw.replace(",", " ").split():
        value = float(tok)
        out.append(int(value) if value.is_integer() and "." not in tok else value)
    return out


def cmd_generate(args) -> int:
    from .runs import generate, load_spec

    spec_path = Path(args.spec)
    if not spec_path.exists():
        raise FileNotFoundError(f"spec file not found: {spec_path}")
    spec = load_spec(spec_path)  # validates before anything is written
    manifest = generate(spec, args.out)
    print(json.dumps({k: v["dialogues"] for k, v in manifest["files"].items()}))
    return EXIT_OK


def _load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    cfg = RunConfig.load(path)
    for key in ("train_features", "val_features", "test_features"):
        value = getattr(cfg, key)
        if value is not None and not Path(value).exists():
            raise FileNotFoundError(f"{key} not found: {value}")
    if isinstance(cfg.synthetic_spec, str) and not Path(cfg.synthetic_spec).exists():
        raise FileNotFoundError(f"synthetic_spec not found: {cfg.synthetic_spec}")
    return cfg


def cmd_train(args) -> int:
    from .runs import train_run

    cfg = _load_config(args.config)
    if args.features or args.synthetic_spec:
        for path in filter(None, (args.features, args.synthetic_spec)):
            if not Path(path).exists():
                raise FileNotFoundError(f"file not found: {path}")
        obj = cfg.to_dict()
        if args.features:
            obj.update(train_features=args.features, synthetic_spec=None)
        else:
            obj.update(synthetic_spec=args.synthetic_spec, train_features=None)
        cfg = RunConfig.from_dict(obj)
    est, metrics = train_run(cfg, args.out)
    summary = {"best_epoch": est.train_result_.best_epoch, "steps": est.train_result_.steps}
    if metrics is not None:
        summary.update(weighted_accuracy=metrics.weighted_accuracy, weighted_f1=metrics.weighted_f1)
    print(json.dumps(summary))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .runs import evaluate_run

    for p in (args.model, args.features):
        if not Path(p).exists():
            raise FileNotFoundError(f"file not found: {p}")
    metrics = evaluate_run(args.model, args.features, args.out)
    print(json.dumps({"weighted_accuracy": metrics.weighted_accuracy, "weighted_f1": metrics.weighted_f1}))
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .runs import sweep

    if args.param not in SWEEPABLE:
        raise ConfigError(f"unknown sweep parameter {args.param!r}; choose from {sorted(SWEEPABLE)}")
    cfg = _load_config(args.config)
    out = args.out or str(Path(cfg.out_dir) / f"sweep_{args.param.replace('^', '')}.csv")
    rows = sweep(cfg, args.param, _parse_values(args.values), out)
    print(json.dumps({"rows": len(rows), "csv": out}))
    return EXIT_OK


def cmd_inspect(args) -> int:
    from .runs import inspect

    for p in (args.model, args.features):
        if not Path(p).exists():
            raise FileNotFoundError(f"file not found: {p}")
    info = inspect(args.model, args.features, args.out)
    print(json.dumps({"nodes": info["nodes"], "edges": info["edges"]}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mglra", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset")
    p.add_argument("--spec", required=True, help="SyntheticSpec JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train and evaluate from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (defaults to out_dir in the config)")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--features", help="training JSONL, overriding the config")
    src.add_argument("--synthetic-spec", help="SyntheticSpec JSON, overriding the config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a saved model on a feature file")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="train once per hyperparameter value")
    p.add_argument("--param", required=True, help=f"one of {', '.join(sorted(SWEEPABLE))}")
    p.add_argument("--values", required=True, help="comma or space separated list")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="CSV path")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("inspect", help="dump graph, embeddings and confusion matrix")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (FileNotFoundError, PermissionError, IsADirectoryError, DatasetParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, SchemaError, ContractError, ModelFormatError, TrainingError, ShapeError,
            NonFiniteError, ValueError, TypeError) as exc:
        print(f"error: {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
