"""Exact k-NN inference in embedding space and the accuracy metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .exceptions import EmptyIndexError, EmptyTestClassError, ShapeError
from .model import ModelConfig, check_compatible, embed
from .numerics import ParamStore

_QUERY_CHUNK = 64


@dataclass
class EmbeddingIndex:
    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.points.ndim != 2 or len(self.points) == 0:
            raise EmptyIndexError("an embedding index needs at least one point")
        if len(self.labels) != len(self.points):
            raise ShapeError("one label per indexed point is required")

    def __len__(self) -> int:
        return len(self.points)


def build_index(params: ParamStore, config: ModelConfig, gallery) -> EmbeddingIndex:
    check_compatible(config, gallery.channels)
    return EmbeddingIndex(embed(gallery.streams, params, config), gallery.labels)


def _distances(points: np.ndarray, queries: np.ndarray) -> np.ndarray:
    diff = queries[:, None, :] - points[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def _vote(dists: np.ndarray, labels: np.ndarray, k: int, exclude: int | None = None) -> int:
    order = np.argsort(dists, kind="stable")
    if exclude is not None:
        order = order[order != exclude]
    nearest = order[:k]
    near_labels = labels[nearest]
    classes, votes = np.unique(near_labels, return_counts=True)
    best = classes[votes == votes.max()]
    if len(best) == 1:
        return int(best[0])
    # tie on votes: smaller summed distance, then lower class id
    sums = np.array([dists[nearest[near_labels == c]].sum() for c in best])
    return int(best[np.flatnonzero(sums == sums.min())[0]])


def knn_predict(index: EmbeddingIndex, query, k: int = 5) -> int:
    """Majority label of the k nearest indexed points.

    Distance ties go to the lower gallery index; vote ties to the smaller
    summed distance, then to the lower class id.
    """
    return int(knn_predict_batch(index, np.asarray(query, dtype=np.float64)[None], k)[0])


def knn_predict_batch(index: EmbeddingIndex, queries, k: int = 5,
                      leave_one_out: bool = False) -> np.ndarray:
    """Vectorised :func:`knn_predict`; ``leave_one_out`` skips query i's own gallery slot i."""
    if len(index) == 0:
        raise EmptyIndexError("empty index")
    queries = np.asarray(queries, dtype=np.float64)
    limit = len(index) - (1 if leave_one_out else 0)
    if not 1 <= k <= limit:
        raise ValueError(f"k must lie in [1, {limit}], got {k}")
    if queries.ndim != 2 or queries.shape[1] != index.points.shape[1]:
        raise ShapeError(f"query shape {queries.shape} does not match index dim {index.points.shape[1]}")
    out = np.empty(len(queries), dtype=np.int64)
    for start in range(0, len(queries), _QUERY_CHUNK):
        block = _distances(index.points, queries[start:start + _QUERY_CHUNK])
        for j, row in enumerate(block):
            i = start + j
            out[i] = _vote(row, index.labels, k, exclude=i if leave_one_out else None)
    return out


@dataclass
class EvalReport:
    top1: float
    c_avg: float
    head_acc: float
    tail_acc: float
    confusion: np.ndarray
    k: int
    head_classes: tuple[int, ...]

    @property
    def recalls(self) -> np.ndarray:
        return np.diag(self.confusion) / self.confusion.sum(axis=1)

    def to_dict(self) -> dict:
        return {
            "top1": self.top1,
            "c_avg": self.c_avg,
            "head_acc": self.head_acc,
            "tail_acc": self.tail_acc,
            "confusion": self.confusion.astype(int).tolist(),
            "k": self.k,
            "head_classes": list(self.head_classes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def report_from_predictions(y_true, y_pred, num_classes: int, head_classes, k: int = 5) -> EvalReport:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    rows = confusion.sum(axis=1)
    if np.any(rows == 0):
        raise EmptyTestClassError(f"classes {np.flatnonzero(rows == 0).tolist()} have no test samples")
    recalls = np.diag(confusion) / rows
    head = sorted(int(c) for c in head_classes)
    tail = [c for c in range(num_classes) if c not in head]
    return EvalReport(
        top1=float(np.trace(confusion) / confusion.sum()),
        c_avg=float(recalls.mean()),
        head_acc=float(recalls[head].mean()) if head else float("nan"),
        tail_acc=float(recalls[tail].mean()) if tail else float("nan"),
        confusion=confusion,
        k=k,
        head_classes=tuple(head),
    )


def evaluate(params: ParamStore, config: ModelConfig, gallery, test, k: int = 5,
             head_classes=(0, 1, 2), index: EmbeddingIndex | None = None) -> EvalReport:
    """k-NN evaluation with the gallery (training split) as reference set."""
    if index is None:
        index = build_index(params, config, gallery)
    check_compatible(config, test.channels)
    preds = knn_predict_batch(index, embed(test.streams, params, config), k)
    return report_from_predictions(test.labels, preds, config.num_classes, head_classes, k)
