"""Exact O(N^2) t-SNE for 2-D views of the embedding space."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, DegenerateDistancesError, ShapeError

LOG2_TOLERANCE = 1e-3
# the search runs well inside the contract so recomputed entropies keep a margin
_SEARCH_TOLERANCE = 1e-2 * LOG2_TOLERANCE
MAX_SEARCH_STEPS = 100
_Q_FLOOR = 1e-300


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 30.0
    output_dim: int = 2
    iterations: int = 500
    learning_rate: float = 100.0
    early_exaggeration: float = 4.0
    exaggeration_iterations: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.output_dim != 2:
            raise ConfigError("output_dim is fixed to 2")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if not self.perplexity > 1:
            raise ConfigError("perplexity must be > 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")


def squared_distances(x: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - x[None, :, :]
    return np.sum(diff * diff, axis=-1)


def _row_entropy(dist_row: np.ndarray, beta: np.ndarray):
    """Conditional distributions and their entropy (bits) for each beta.

    ``dist_row`` is [R, N-1] (self excluded), ``beta`` is [R].
    """
    shifted = dist_row - dist_row.min(axis=1, keepdims=True)
    w = np.exp(-shifted * beta[:, None])
    z = w.sum(axis=1)
    p = w / z[:, None]
    entropy_nats = np.log(z) + beta * np.sum(p * shifted, axis=1)
    return p, entropy_nats / np.log(2.0)


def conditional_affinities(x, perplexity: float) -> tuple[np.ndarray, np.ndarray]:
    """Row-stochastic P_{j|i} and the per-row bandwidth precisions beta_i = 1/(2 sigma_i^2).

    Each row's beta is found by bisection in log space until the perplexity
    matches the target within ``LOG2_TOLERANCE`` in log2 units.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if x.ndim != 2 or n < 3:
        raise ShapeError(f"need at least 3 points as an [N, D] array, got shape {x.shape}")
    if not 1 < perplexity <= n - 1:
        raise ConfigError(f"perplexity must lie in (1, {n - 1}], got {perplexity}")
    d = squared_distances(x)
    off = ~np.eye(n, dtype=bool)
    rows = d[off].reshape(n, n - 1)
    spread = rows.max(axis=1) - rows.min(axis=1)
    if np.any(rows.max(axis=1) == 0):
        bad = np.flatnonzero(rows.max(axis=1) == 0).tolist()
        raise DegenerateDistancesError(f"rows {bad} have all pairwise distances equal to 0")
    target = np.log2(perplexity)
    # bracket log(beta) around the scale of each row's distances
    centre = -np.log(np.where(spread > 0, spread, 1.0))
    lo, hi = centre - 60.0, centre + 60.0
    log_beta = centre.copy()
    for _ in range(MAX_SEARCH_STEPS):
        _, h = _row_entropy(rows, np.exp(log_beta))
        err = h - target
        done = np.abs(err) <= _SEARCH_TOLERANCE
        if np.all(done):
            break
        # entropy falls as beta grows
        too_flat = (err > 0) & ~done
        lo = np.where(too_flat, log_beta, lo)
        hi = np.where(~too_flat & ~done, log_beta, hi)
        log_beta = np.where(done, log_beta, 0.5 * (lo + hi))
    beta = np.exp(log_beta)
    p_rows, _ = _row_entropy(rows, beta)
    cond = np.zeros((n, n))
    cond[off] = p_rows.reshape(-1)
    return cond, beta


def perplexities(cond: np.ndarray) -> np.ndarray:
    """2**entropy of each row of a conditional affinity matrix."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(cond > 0, cond * np.log2(cond), 0.0)
    return 2.0 ** (-terms.sum(axis=1))


def calibrate_affinities(x, perplexity: float = 30.0) -> np.ndarray:
    """Symmetric joint affinities ``(P_{j|i} + P_{i|j}) / 2N``."""
    cond, _ = conditional_affinities(x, perplexity)
    return (cond + cond.T) / (2.0 * len(cond))


def student_t_affinities(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Low-dimensional joint probabilities Q and the kernel ``1 / (1 + |y_i - y_j|^2)``."""
    kernel = 1.0 / (1.0 + squared_distances(y))
    np.fill_diagonal(kernel, 0.0)
    return kernel / kernel.sum(), kernel


def kl_divergence(p: np.ndarray, y: np.ndarray) -> float:
    q, _ = student_t_affinities(y)
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / np.maximum(q[mask], _Q_FLOOR))))


def kl_gradient(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    """d KL(P || Q) / dy_i = 4 sum_j (p_ij - q_ij)(y_i - y_j) / (1 + |y_i - y_j|^2)."""
    q, kernel = student_t_affinities(y)
    w = (p - q) * kernel
    return 4.0 * (w.sum(axis=1)[:, None] * y - w @ y)


def tsne(x, config: TsneConfig = TsneConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Plain gradient descent on KL(P || Q); returns the layout and the per-iteration KL."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if not config.perplexity < n - 1:
        raise ConfigError(f"perplexity must be < N - 1 = {n - 1}")
    p = calibrate_affinities(x, config.perplexity)
    rng = np.random.default_rng(config.seed)
    y = rng.normal(0.0, 1e-4, size=(n, config.output_dim))
    trace = np.empty(config.iterations + 1)
    trace[0] = kl_divergence(p, y)
    for it in range(config.iterations):
        scale = config.early_exaggeration if it < config.exaggeration_iterations else 1.0
        y = y - config.learning_rate * kl_gradient(scale * p, y)
        trace[it + 1] = kl_divergence(p, y)
    return y, trace


def export_layout(layout, labels, path) -> None:
    layout = np.asarray(layout, dtype=np.float64)
    labels = np.asarray(labels)
    if layout.ndim != 2 or layout.shape[1] != 2 or len(layout) != len(labels):
        raise ShapeError(f"layout {layout.shape} does not match {len(labels)} labels")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "y", "label"])
        for (a, b), label in zip(layout, labels):
            writer.writerow([f"{a:.12g}", f"{b:.12g}", int(label)])


def export_kl_trace(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iteration", "kl"])
        for i, v in enumerate(trace):
            writer.writerow([i, f"{v:.12g}"])


def read_layout(path) -> tuple[np.ndarray, np.ndarray]:
    with open(Path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    layout = np.array([[float(r["x"]), float(r["y"])] for r in rows]).reshape(-1, 2)
    return layout, np.array([int(r["label"]) for r in rows], dtype=np.int64)
