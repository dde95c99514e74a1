"""Mini-batch training loop, PK sampling, checkpoints and history."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .evaluator import EmbeddingIndex, knn_predict_batch, report_from_predictions
from .exceptions import (
    ConfigError,
    CorruptBlobError,
    NonFiniteError,
    TooFewClassesError,
    VersionMismatchError,
)
from .losses import LossConfig, estimate_priors, family_loss_node, weight_balancing_hook
from .model import ModelConfig, check_compatible, embed, forward_node, init_params
from .numerics import Graph, ParamStore, sgd_step

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
HISTORY_HEADER = "epoch,train_loss,train_top1,test_top1,test_cavg"

# Reference protocol values; the desk-scale defaults below replace lr and epochs.
PAPER_BATCH_SIZE = 32
PAPER_LR = 1e-4
PAPER_EPOCHS = 100


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = PAPER_BATCH_SIZE
    lr: float = 1e-2
    epochs: int = 50
    classes_per_batch: int = 8
    samples_per_class: int = 4
    steps_per_epoch: int | None = None
    train_fraction: float = 0.8
    k: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.classes_per_batch * self.samples_per_class != self.batch_size:
            raise ConfigError("classes_per_batch * samples_per_class must equal batch_size")
        if self.samples_per_class < 2:
            raise ConfigError("samples_per_class must be >= 2")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ConfigError("steps_per_epoch must be >= 1")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if self.k < 1:
            raise ConfigError("k must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_top1: float
    test_top1: float
    test_cavg: float


@dataclass
class History:
    records: list[EpochRecord] = field(default_factory=list)
    initial_loss: float | None = None

    def append(self, record: EpochRecord) -> None:
        if self.records and record.epoch != self.records[-1].epoch + 1:
            raise ValueError("epochs must be recorded in order")
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def to_csv(self) -> str:
        lines = [HISTORY_HEADER]
        for r in self.records:
            lines.append(f"{r.epoch},{r.train_loss!r},{r.train_top1!r},{r.test_top1!r},{r.test_cavg!r}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def read_csv(cls, path) -> "History":
        lines = Path(path).read_text().splitlines()
        if not lines or lines[0] != HISTORY_HEADER:
            raise ValueError(f"{path}: missing history header")
        hist = cls()
        for line in lines[1:]:
            e, *vals = line.split(",")
            hist.append(EpochRecord(int(e), *(float(v) for v in vals)))
        return hist


@dataclass
class Checkpoint:
    params: ParamStore
    model_config: ModelConfig
    loss_config: LossConfig
    train_config: TrainConfig
    epoch: int
    seed: int
    class_counts: list[int]
    head_classes: tuple[int, ...] = (0, 1, 2)
    frame_shape: tuple[int, int, int] | None = None


def pk_sample(labels, P: int, K: int, rng: np.random.Generator) -> np.ndarray:
    """P distinct classes, K samples each; small classes are drawn with replacement."""
    if K < 2:
        raise ValueError("K must be >= 2 so every sampled class has a positive pair")
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) < P:
        raise TooFewClassesError(f"need {P} classes with samples, dataset has {len(classes)}")
    chosen = rng.choice(classes, size=P, replace=False)
    batch = []
    for c in chosen:
        members = np.flatnonzero(labels == c)
        batch.append(rng.choice(members, size=K, replace=len(members) < K))
    return np.concatenate(batch)


def _batch_loss(params, model_config, loss_config, priors, dataset, idx):
    g = Graph()
    streams = {m: dataset.streams[m][idx] for m in model_config.streams}
    emb, logits = forward_node(g, params, streams, model_config)
    loss = family_loss_node(g, emb, logits, dataset.labels[idx], loss_config, priors)
    return g, loss


def train(config: TrainConfig, model_config: ModelConfig, loss_config: LossConfig,
          train_set, test_set, head_classes=(0, 1, 2),
          on_epoch_end: Callable[[int, ParamStore, EpochRecord], bool | None] | None = None,
          ) -> tuple[Checkpoint, History]:
    """Train from scratch; one History record per epoch, evaluated with k-NN.

    A truthy return from ``on_epoch_end`` stops training after that epoch.
    Without a ``test_set`` the test columns of the history are NaN.
    """
    check_compatible(model_config, train_set.channels)
    if test_set is not None:
        check_compatible(model_config, test_set.channels)
    priors = estimate_priors(train_set.labels, model_config.num_classes)
    params = init_params(model_config, config.seed)
    rng = np.random.default_rng(config.seed)
    steps = config.steps_per_epoch or math.ceil(len(train_set) / config.batch_size)
    history = History()

    for epoch in range(1, config.epochs + 1):
        losses = []
        for step in range(steps):
            idx = pk_sample(train_set.labels, config.classes_per_batch, config.samples_per_class, rng)
            try:
                g, loss = _batch_loss(params, model_config, loss_config, priors, train_set, idx)
                value = float(g.value(loss))
                g.backward(loss, params)
                sgd_step(params, config.lr)
            except NonFiniteError as exc:
                raise NonFiniteError(f"non-finite loss at epoch {epoch}, step {step}: {exc}") from exc
            if history.initial_loss is None:
                history.initial_loss = value
            losses.append(value)
            if loss_config.family == "WB":
                weight_balancing_hook(params, loss_config.delta)

        train_emb = embed(train_set.streams, params, model_config)
        index = EmbeddingIndex(train_emb, train_set.labels)
        k_train = min(config.k, len(train_set) - 1)
        train_pred = knn_predict_batch(index, train_emb, k_train, leave_one_out=True)
        test_top1 = test_cavg = float("nan")
        if test_set is not None:
            test_pred = knn_predict_batch(index, embed(test_set.streams, params, model_config),
                                          min(config.k, len(train_set)))
            report = report_from_predictions(test_set.labels, test_pred, model_config.num_classes,
                                             head_classes, config.k)
            test_top1, test_cavg = report.top1, report.c_avg
        record = EpochRecord(epoch, float(np.mean(losses)),
                             float(np.mean(train_pred == train_set.labels)),
                             test_top1, test_cavg)
        history.append(record)
        log.info("epoch %d loss %.5f train %.4f test %.4f c-avg %.4f", epoch,
                 record.train_loss, record.train_top1, record.test_top1, record.test_cavg)
        if on_epoch_end is not None and on_epoch_end(epoch, params, record):
            break

    ckpt = Checkpoint(params, model_config, loss_config, config, len(history), config.seed,
                      [int(c) for c in train_set.class_counts], tuple(head_classes),
                      tuple(train_set.frame_shape))
    return ckpt, history


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def save_checkpoint(ckpt: Checkpoint, directory) -> None:
    """Write ``checkpoint.json`` and ``weights.bin`` (little-endian float64)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tensors, chunks, offset = {}, [], 0
    for name, value in ckpt.params.items():
        raw = np.ascontiguousarray(value, dtype="<f8").tobytes()
        tensors[name] = {"shape": list(value.shape), "offset": offset, "nbytes": len(raw)}
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "epoch": ckpt.epoch,
        "seed": ckpt.seed,
        "model_config": ckpt.model_config.to_dict(),
        "loss_config": ckpt.loss_config.to_dict(),
        "train_config": ckpt.train_config.to_dict(),
        "class_counts": list(ckpt.class_counts),
        "head_classes": list(ckpt.head_classes),
        "frame_shape": list(ckpt.frame_shape) if ckpt.frame_shape else None,
        "tensors": tensors,
        "blob_bytes": len(blob),
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    (directory / "checkpoint.json").write_text(json.dumps(manifest, indent=1) + "\n")
    (directory / "weights.bin").write_bytes(blob)


def load_checkpoint(directory) -> Checkpoint:
    directory = Path(directory)
    manifest = json.loads((directory / "checkpoint.json").read_text())
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatchError(
            f"checkpoint version {manifest.get('version')!r}, expected {CHECKPOINT_VERSION}"
        )
    blob = (directory / "weights.bin").read_bytes()
    if len(blob) != manifest["blob_bytes"]:
        raise CorruptBlobError(f"weights.bin holds {len(blob)} bytes, expected {manifest['blob_bytes']}")
    if hashlib.sha256(blob).hexdigest() != manifest["sha256"]:
        raise CorruptBlobError("weights.bin checksum mismatch")
    params = ParamStore()
    for name, entry in manifest["tensors"].items():
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        if entry["nbytes"] != count * 8:
            raise CorruptBlobError(f"tensor {name!r}: byte count disagrees with shape {shape}")
        chunk = blob[entry["offset"]:entry["offset"] + entry["nbytes"]]
        params.add(name, np.frombuffer(chunk, dtype="<f8").reshape(shape).astype(np.float64))
    loss = dict(manifest["loss_config"])
    loss["lambda_"] = loss.pop("lambda")
    frame = manifest.get("frame_shape")
    return Checkpoint(
        params=params,
        model_config=ModelConfig(**manifest["model_config"]),
        loss_config=LossConfig(**loss),
        train_config=TrainConfig(**manifest["train_config"]),
        epoch=manifest["epoch"],
        seed=manifest["seed"],
        class_counts=manifest["class_counts"],
        head_classes=tuple(manifest["head_classes"]),
        frame_shape=tuple(frame) if frame else None,
    )
