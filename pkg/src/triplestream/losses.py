"""Training objectives.

Every loss exists twice: a ``*_node`` builder that adds it to a
:class:`~triplestream.numerics.Graph` (batch mean, differentiable), and a plain
function returning a float for single inputs, which simply runs the builder on
a throwaway graph.

Families
--------
``TL``  standard margin triplet loss on batch-hard triplets
``RC``  cross-entropy + lambda * reciprocal triplet loss
``LA``  logit-adjusted cross-entropy + lambda * reciprocal triplet loss
``CB``  class-balanced sigmoid focal loss + lambda * reciprocal triplet loss
``WB``  ``CB`` plus a MaxNorm projection of the classifier rows after each step
``CE``  plain cross-entropy (reference run for ``RC`` with lambda = 0)
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .exceptions import (
    ConfigError,
    EmptyLabelsError,
    MissingHeadError,
    NoValidTripletError,
    ZeroPriorError,
)
from .model import HEAD_WEIGHT
from .numerics import DISTANCE_FLOOR, Graph, ParamStore, maxnorm_project

FAMILIES = ("TL", "RC", "LA", "CB", "WB", "CE")
MINING_STRATEGIES = ("batch-hard", "all")


@dataclass(frozen=True)
class LossConfig:
    family: str = "RC"
    lambda_: float = 0.1
    margin: float = 0.2
    tau: float = 1.0
    beta: float = 0.99
    gamma: float = 1.0
    delta: float = 1.0
    literal_eq5: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"loss family must be one of {FAMILIES}, got {self.family!r}")
        if self.lambda_ < 0:
            raise ConfigError("lambda must be >= 0")
        if not 0 <= self.beta < 1:
            raise ConfigError("beta must lie in [0, 1)")
        if self.gamma < 0 or self.tau < 0 or self.margin < 0:
            raise ConfigError("gamma, tau and margin must be >= 0")
        if not self.delta > 0:
            raise ConfigError("delta must be > 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lambda_")
        return d


@dataclass(frozen=True)
class ClassPriors:
    pi: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pi", np.asarray(self.pi, dtype=np.float64))
        object.__setattr__(self, "counts", np.asarray(self.counts, dtype=np.int64))


def estimate_priors(labels, num_classes: int | None = None) -> ClassPriors:
    """Training-set class frequencies."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise EmptyLabelsError("cannot estimate priors from an empty label list")
    counts = np.bincount(labels, minlength=num_classes or 0)
    if np.any(counts == 0):
        missing = np.flatnonzero(counts == 0).tolist()
        raise ZeroPriorError(f"classes {missing} have no training samples")
    return ClassPriors(counts / counts.sum(), counts)


class Triplet(NamedTuple):
    anchor: int
    positive: int
    negative: int


def pairwise_distances(embeddings) -> np.ndarray:
    x = np.asarray(embeddings, dtype=np.float64)
    diff = x[:, None, :] - x[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def mine_triplets(embeddings, labels, strategy: str = "batch-hard") -> list[Triplet]:
    """Select triplets from a batch.

    ``batch-hard`` keeps, for each anchor, its farthest positive and nearest
    negative (lowest index on ties).  ``all`` enumerates every valid triplet.
    """
    if strategy not in MINING_STRATEGIES:
        raise ValueError(f"unknown mining strategy {strategy!r}")
    labels = np.asarray(labels)
    dist = pairwise_distances(embeddings)
    triplets = []
    for a in range(len(labels)):
        same = labels == labels[a]
        same[a] = False
        positives = np.flatnonzero(same)
        negatives = np.flatnonzero(labels != labels[a])
        if len(positives) == 0 or len(negatives) == 0:
            continue
        if strategy == "all":
            triplets.extend(Triplet(a, int(p), int(n)) for p in positives for n in negatives)
        else:
            p = positives[np.argmax(dist[a, positives])]
            n = negatives[np.argmin(dist[a, negatives])]
            triplets.append(Triplet(a, int(p), int(n)))
    if not triplets:
        raise NoValidTripletError("no anchor in the batch has both a positive and a negative")
    return triplets


# ---------------------------------------------------------------------------
# graph builders (batch means)
# ---------------------------------------------------------------------------


def triplet_distances_node(g: Graph, embeddings: int, triplets) -> tuple[int, int]:
    a, p, n = (list(col) for col in zip(*triplets))
    anchors = g.take(embeddings, a)
    return g.distance(anchors, g.take(embeddings, p)), g.distance(anchors, g.take(embeddings, n))


def triplet_loss_node(g: Graph, d_ap: int, d_an: int, margin: float) -> int:
    m = g.constant(np.full(g.value(d_ap).shape, float(margin)))
    return g.mean(g.relu(g.add(g.sub(d_ap, d_an), m)))


def _clamp_below(g: Graph, x: int, floor: float) -> int:
    value = g.value(x)
    low = value < floor
    if not np.any(low):
        return x
    keep = g.constant((~low).astype(np.float64))
    return g.add(g.mul(x, keep), g.constant(np.where(low, floor, 0.0)))


def reciprocal_triplet_loss_node(g: Graph, d_ap: int, d_an: int) -> int:
    d_an = _clamp_below(g, d_an, DISTANCE_FLOOR)
    inverse = g.exp(g.scalar_mul(g.log(d_an), -1.0))
    return g.mean(g.add(d_ap, inverse))


def _as_rows(g, logits, labels):
    """Promote single-sample inputs to a one-row batch."""
    if g.value(logits).ndim == 1:
        logits = g.reshape(logits, (1, g.value(logits).shape[0]))
    return logits, np.atleast_1d(np.asarray(labels, dtype=np.int64))


def _one_hot(labels, num_classes):
    out = np.zeros((len(labels), num_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def _per_sample_ce(g: Graph, logits: int, labels) -> int:
    values = g.value(logits)
    shift = g.constant(np.broadcast_to(values.max(axis=1, keepdims=True), values.shape))
    z = g.sub(logits, shift)
    lse = g.log(g.sum(g.exp(z), axis=1))
    picked = g.sum(g.mul(z, g.constant(_one_hot(labels, values.shape[1]))), axis=1)
    return g.sub(lse, picked)


def cross_entropy_node(g: Graph, logits: int, labels) -> int:
    """Mean softmax cross-entropy, max-shifted log-sum-exp."""
    logits, labels = _as_rows(g, logits, labels)
    return g.mean(_per_sample_ce(g, logits, labels))


def logit_adjusted_ce_node(g: Graph, logits: int, labels, priors: ClassPriors, tau: float) -> int:
    if np.any(priors.pi <= 0):
        raise ZeroPriorError("logit adjustment needs strictly positive class priors")
    logits, labels = _as_rows(g, logits, labels)
    offset = np.broadcast_to(tau * np.log(priors.pi), g.value(logits).shape)
    return g.mean(_per_sample_ce(g, g.add(logits, g.constant(offset)), labels))


def class_balanced_weight(n_y, beta: float) -> np.ndarray:
    """Effective-number weight ``(1 - beta) / (1 - beta**n_y)``."""
    n_y = np.asarray(n_y, dtype=np.float64)
    if beta == 0:
        return np.ones_like(n_y)
    return (1.0 - beta) / (1.0 - np.power(beta, n_y))


def class_balanced_focal_node(g: Graph, logits: int, labels, priors: ClassPriors,
                              beta: float, gamma: float, literal: bool = False) -> int:
    logits, labels = _as_rows(g, logits, labels)
    shape = g.value(logits).shape
    if literal:
        sign = np.ones(shape)
    else:
        sign = 2.0 * _one_hot(labels, shape[1]) - 1.0
    z = g.mul(logits, g.constant(sign))
    log_p = g.log_sigmoid(z)
    log_q = g.log_sigmoid(g.scalar_mul(z, -1.0))  # log(1 - p)
    focal = g.exp(g.scalar_mul(log_q, gamma))
    per_sample = g.sum(g.mul(focal, log_p), axis=1)
    w = class_balanced_weight(priors.counts[labels], beta)
    return g.scalar_mul(g.mean(g.mul(per_sample, g.constant(w))), -1.0)


# ---------------------------------------------------------------------------
# scalar helpers
# ---------------------------------------------------------------------------


def _scalar(build, *arrays):
    g = Graph()
    nodes = [g.constant(np.atleast_1d(np.asarray(a, dtype=np.float64))) for a in arrays]
    return float(g.value(build(g, *nodes)))


def triplet_loss(d_ap: float, d_an: float, margin: float = 0.2) -> float:
    return _scalar(lambda g, a, n: triplet_loss_node(g, a, n, margin), d_ap, d_an)


def reciprocal_triplet_loss(d_ap: float, d_an: float) -> float:
    return _scalar(reciprocal_triplet_loss_node, d_ap, d_an)


def cross_entropy(logits, y: int) -> float:
    return _scalar(lambda g, x: cross_entropy_node(g, x, [y]), np.asarray(logits)[None])


def hybrid_loss(logits, y: int, d_ap: float, d_an: float, lam: float = 0.1) -> float:
    return cross_entropy(logits, y) + lam * reciprocal_triplet_loss(d_ap, d_an)


def logit_adjusted_ce(logits, y: int, priors: ClassPriors, tau: float = 1.0) -> float:
    return _scalar(lambda g, x: logit_adjusted_ce_node(g, x, [y], priors, tau), np.asarray(logits)[None])


def class_balanced_focal(logits, y: int, priors: ClassPriors, beta: float = 0.99,
                         gamma: float = 1.0, literal: bool = False) -> float:
    return _scalar(
        lambda g, x: class_balanced_focal_node(g, x, [y], priors, beta, gamma, literal),
        np.asarray(logits)[None],
    )


def weight_balancing_hook(params: ParamStore, delta: float, head: str = HEAD_WEIGHT) -> None:
    """Project every classifier row back into the L2 ball of radius ``delta``."""
    if head not in params:
        raise MissingHeadError(f"classification head {head!r} not found in parameters")
    params[head] = maxnorm_project(params[head], delta)


# ---------------------------------------------------------------------------
# family dispatch
# ---------------------------------------------------------------------------


def family_loss_node(g: Graph, embeddings: int, logits: int, labels,
                     config: LossConfig, priors: ClassPriors) -> int:
    """Total training loss of one batch for the configured family."""
    labels = np.asarray(labels, dtype=np.int64)
    family = config.family
    if family == "CE":
        return cross_entropy_node(g, logits, labels)
    triplets = mine_triplets(g.value(embeddings), labels, "batch-hard")
    d_ap, d_an = triplet_distances_node(g, embeddings, triplets)
    if family == "TL":
        return triplet_loss_node(g, d_ap, d_an, config.margin)
    if family == "RC":
        cls = cross_entropy_node(g, logits, labels)
    elif family == "LA":
        cls = logit_adjusted_ce_node(g, logits, labels, priors, config.tau)
    else:  # CB, WB
        cls = class_balanced_focal_node(g, logits, labels, priors, config.beta,
                                        config.gamma, config.literal_eq5)
    rt = reciprocal_triplet_loss_node(g, d_ap, d_an)
    return g.add(cls, g.scalar_mul(rt, config.lambda_))
