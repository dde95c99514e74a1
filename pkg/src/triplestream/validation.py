"""Input checks for the estimator wrappers.

The estimators take a flat 2-D design matrix so they compose with sklearn
tooling; each row is the concatenation of the per-stream [C, T, H, W] blocks.
"""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ShapeError


def stream_widths(channels, frame_shape) -> list[int]:
    t, h, w = frame_shape
    return [int(c) * t * h * w for c in channels]


def flatten_streams(streams) -> np.ndarray:
    """[N, C_m, T, H, W] arrays -> one [N, sum C_m*T*H*W] matrix."""
    streams = [np.asarray(s, dtype=np.float64) for s in streams]
    n = {len(s) for s in streams}
    if len(n) != 1:
        raise ShapeError(f"streams disagree on sample count: {sorted(n)}")
    if any(s.ndim != 5 for s in streams):
        raise ShapeError("every stream must be [N, C, T, H, W]")
    return np.concatenate([s.reshape(len(s), -1) for s in streams], axis=1)


def unflatten_streams(X, channels, frame_shape) -> tuple[np.ndarray, ...]:
    """Inverse of :func:`flatten_streams` for known channel counts and frame shape."""
    X = check_array(X, dtype=np.float64)
    widths = stream_widths(channels, frame_shape)
    if X.shape[1] != sum(widths):
        raise ShapeError(
            f"X has {X.shape[1]} features, channels {tuple(channels)} x frames {tuple(frame_shape)} "
            f"need {sum(widths)}"
        )
    out, start = [], 0
    for c, width in zip(channels, widths):
        out.append(X[:, start:start + width].reshape(len(X), c, *frame_shape))
        start += width
    return tuple(out)
