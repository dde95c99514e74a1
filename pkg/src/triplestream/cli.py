"""Command-line entry point: generate, train, evaluate, project.

stdout carries one JSON document per command; logs go to stderr.
Exit codes: 0 ok, 2 config, 3 io, 4 numeric abort, 5 incompatibility.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .config import load_run_config
from .datagen import generate, read_dataset, split, write_dataset
from .evaluator import EmbeddingIndex, evaluate, knn_predict_batch, report_from_predictions
from .exceptions import (
    CheckpointError,
    ConfigError,
    DatasetFormatError,
    IncompatibleError,
    NonFiniteError,
    ShapeError,
)
from .losses import FAMILIES
from .model import check_compatible, embed
from .projection import export_kl_trace, export_layout, tsne
from .trainer import load_checkpoint, save_checkpoint, train

log = logging.getLogger("triplestream")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_INCOMPATIBLE = 5


def _emit(payload: dict) -> None:
    sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")
    sys.stdout.flush()


def _out_dir(args, config) -> Path:
    out = args.out or config.output_dir
    if out is None:
        raise ConfigError("no output directory: pass --out or set output_dir")
    return Path(out)


def _check_data(ckpt, data) -> None:
    try:
        check_compatible(ckpt.model_config, data.channels)
    except ShapeError as exc:
        raise IncompatibleError(str(exc)) from exc
    if data.num_classes != ckpt.model_config.num_classes:
        raise IncompatibleError(
            f"checkpoint has {ckpt.model_config.num_classes} classes, data has {data.num_classes}"
        )
    if ckpt.frame_shape is not None and tuple(data.frame_shape) != tuple(ckpt.frame_shape):
        raise IncompatibleError(f"checkpoint frames {ckpt.frame_shape}, data frames {data.frame_shape}")


def cmd_generate(args) -> int:
    config = load_run_config(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    dataset = generate(config.dataset)
    out = _out_dir(args, config)
    write_dataset(dataset, out)
    log.info("wrote %d snippets to %s", len(dataset), out)
    _emit({"out": str(out), "num_samples": len(dataset),
           "class_counts": [int(c) for c in dataset.class_counts], "seed": config.dataset.seed})
    return EXIT_OK


def cmd_train(args) -> int:
    config = load_run_config(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    if args.loss is not None:
        config = dataclasses.replace(config, loss=dataclasses.replace(config.loss, family=args.loss))
    if args.epochs is not None:
        config = dataclasses.replace(config, train=dataclasses.replace(config.train, epochs=args.epochs))
    data = read_dataset(args.data)
    model_config = config.model_config(data.num_classes, data.channels)
    try:
        check_compatible(model_config, data.channels)
    except ShapeError as exc:
        raise IncompatibleError(str(exc)) from exc
    train_set, test_set = split(data, config.train.train_fraction, config.train.seed)
    ckpt, history = train(config.train, model_config, config.loss, train_set, test_set, data.head_classes)
    report = evaluate(ckpt.params, model_config, train_set, test_set, config.k, data.head_classes)
    out = _out_dir(args, config)
    save_checkpoint(ckpt, out)
    history.write_csv(out / "history.csv")
    (out / "report.json").write_text(report.to_json() + "\n")
    log.info("final test top-1 %.4f, c-avg %.4f", report.top1, report.c_avg)
    _emit({"out": str(out), "epochs": len(history), "report": report.to_dict()})
    return EXIT_OK


def cmd_evaluate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    data = read_dataset(args.data)
    _check_data(ckpt, data)
    train_set, test_set = split(data, ckpt.train_config.train_fraction, ckpt.train_config.seed)
    k = args.k if args.k is not None else ckpt.train_config.k
    if args.query == "test":
        report = evaluate(ckpt.params, ckpt.model_config, train_set, test_set, k, ckpt.head_classes)
    else:
        # gallery and query are both the training split; self-matches count
        points = embed(train_set.streams, ckpt.params, ckpt.model_config)
        preds = knn_predict_batch(EmbeddingIndex(points, train_set.labels), points, k)
        report = report_from_predictions(train_set.labels, preds, ckpt.model_config.num_classes,
                                         ckpt.head_classes, k)
    _emit(report.to_dict())
    return EXIT_OK


def cmd_project(args) -> int:
    config = load_run_config(args.config)
    ckpt = load_checkpoint(args.checkpoint)
    data = read_dataset(args.data)
    _check_data(ckpt, data)
    train_set, test_set = split(data, ckpt.train_config.train_fraction, ckpt.train_config.seed)
    subset = test_set if args.split == "test" else train_set
    points = embed(subset.streams, ckpt.params, ckpt.model_config)
    n = len(points)
    tsne_config = config.tsne
    if args.seed is not None:
        tsne_config = dataclasses.replace(tsne_config, seed=args.seed)
    if n < 3:
        raise IncompatibleError(f"projection needs at least 3 points, split has {n}")
    if tsne_config.perplexity >= n - 1:
        clamped = max(1.5, (n - 1) / 3.0)
        log.warning("perplexity %.3g too large for %d points, using %.3g", tsne_config.perplexity, n, clamped)
        tsne_config = dataclasses.replace(tsne_config, perplexity=clamped)
    layout, trace = tsne(points, tsne_config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    trace_path = out.with_name(out.stem + ".kl.csv")
    export_layout(layout, subset.labels, out)
    export_kl_trace(trace, trace_path)
    _emit({"layout": str(out), "kl_trace": str(trace_path), "points": n,
           "perplexity": tsne_config.perplexity, "initial_kl": float(trace[0]), "final_kl": float(trace[-1])})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="triplestream", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset directory")
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--out", help="dataset directory (default: output_dir)")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train and write checkpoint, history.csv, report.json")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--loss", choices=FAMILIES)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="k-NN evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--query", choices=("test", "train"), default="test")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("project", help="t-SNE layout of checkpoint embeddings")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="layout CSV; the KL trace goes next to it")
    p.add_argument("--config")
    p.add_argument("--split", choices=("test", "train"), default="test")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_project)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except NonFiniteError as exc:
        log.error("numeric abort: %s", exc)
        return EXIT_NUMERIC
    except (IncompatibleError, ShapeError) as exc:
        log.error("incompatible inputs: %s", exc)
        return EXIT_INCOMPATIBLE
    except (OSError, DatasetFormatError, CheckpointError, json.JSONDecodeError, KeyError) as exc:
        log.error("io error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
