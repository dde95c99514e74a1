"""Synthetic long-tailed three-stream snippet datasets.

Each class owns, per stream, a latent code: one DC offset and one travelling-wave
amplitude per channel.  A snippet renders the code (jittered per sample) as a
plane wave over ``[C, T, H, W]`` whose temporal phase is shifted by a random
number of frames, then adds pixel noise.  Codes for the three streams are drawn
independently, so each stream carries its own share of class evidence.

On disk a dataset is a JSON manifest plus one little-endian float32 blob per
stream.  Generated values are rounded to float32 before widening, so the
round trip through disk is bit-exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import (
    ClassTooSmallError,
    ConfigError,
    MalformedManifestError,
    ShapeError,
    TruncatedBlobError,
)

FORMAT_VERSION = 1
NUM_STREAMS = 3
MIN_CLASS_SIZE = 4
MANIFEST_KEYS = (
    "version", "num_classes", "snippet_len", "height", "width",
    "channels", "labels", "class_counts", "seed",
)


@dataclass(frozen=True)
class DatasetConfig:
    num_classes: int = 9
    head_classes: tuple[int, ...] = (0, 1, 2)
    snippet_len: int = 8
    height: int = 8
    width: int = 8
    channels: tuple[int, int, int] = (3, 2, 3)
    imbalance_ratio: float = 60.0
    samples_for_largest_class: int = 400
    noise_sigma: float = 0.6
    # spread of the per-class latent codes, one entry per stream
    class_separation: tuple[float, float, float] = (1.0, 1.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "head_classes", tuple(int(c) for c in self.head_classes))
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "class_separation", tuple(float(s) for s in self.class_separation))
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if len(set(self.head_classes)) != len(self.head_classes) or not all(
            0 <= c < self.num_classes for c in self.head_classes
        ):
            raise ConfigError("head_classes must be distinct ids in [0, num_classes)")
        if len(self.head_classes) >= self.num_classes:
            raise ConfigError("at least one tail class is required")
        if self.imbalance_ratio < 1:
            raise ConfigError("imbalance_ratio must be >= 1")
        if min(self.snippet_len, self.height, self.width) < 1:
            raise ConfigError("snippet_len, height and width must be >= 1")
        if len(self.channels) != NUM_STREAMS or min(self.channels) < 1:
            raise ConfigError("channels must list three positive integers")
        if len(self.class_separation) != NUM_STREAMS or min(self.class_separation) < 0:
            raise ConfigError("class_separation must list three non-negative floats")
        if self.samples_for_largest_class < MIN_CLASS_SIZE:
            raise ConfigError(f"samples_for_largest_class must be >= {MIN_CLASS_SIZE}")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")

    @property
    def tail_classes(self) -> tuple[int, ...]:
        return tuple(c for c in range(self.num_classes) if c not in self.head_classes)

    def stream_shape(self, stream: int) -> tuple[int, int, int, int]:
        return (self.channels[stream], self.snippet_len, self.height, self.width)


@dataclass(frozen=True)
class Snippet:
    streams: tuple[np.ndarray, np.ndarray, np.ndarray]
    label: int


@dataclass
class Dataset:
    """Aligned stream arrays of shape ``[N, C_m, T, H, W]`` plus integer labels."""

    streams: tuple[np.ndarray, ...]
    labels: np.ndarray
    num_classes: int
    seed: int = 0
    head_classes: tuple[int, ...] = field(default=(0, 1, 2))

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.streams = tuple(np.asarray(s, dtype=np.float64) for s in self.streams)
        n = len(self.labels)
        for s in self.streams:
            if s.ndim != 5 or s.shape[0] != n:
                raise ShapeError(f"stream shape {s.shape} does not match {n} labels")
            if s.shape[2:] != self.streams[0].shape[2:]:
                raise ShapeError("streams must share T, H, W")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("labels out of range")

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> Snippet:
        return Snippet(tuple(s[i] for s in self.streams), int(self.labels[i]))

    @property
    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    @property
    def channels(self) -> tuple[int, ...]:
        return tuple(s.shape[1] for s in self.streams)

    @property
    def frame_shape(self) -> tuple[int, int, int]:
        return tuple(self.streams[0].shape[2:])

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(
            tuple(s[idx] for s in self.streams), self.labels[idx],
            self.num_classes, self.seed, self.head_classes,
        )

    def equals(self, other: "Dataset") -> bool:
        return (
            self.num_classes == other.num_classes
            and np.array_equal(self.labels, other.labels)
            and len(self.streams) == len(other.streams)
            and all(np.array_equal(a, b) for a, b in zip(self.streams, other.streams))
        )


def class_sizes(config: DatasetConfig) -> np.ndarray:
    """Per-class sample counts decaying geometrically from the largest class.

    Sizes are handed out by rank: head classes first (in id order), then the
    remaining classes in id order.
    """
    n_max = config.samples_for_largest_class
    n_min = max(math.ceil(n_max / config.imbalance_ratio), MIN_CLASS_SIZE)
    n_min = min(n_min, n_max)
    c = config.num_classes
    ranks = np.arange(c) / (c - 1)
    sizes = np.round(n_max * (n_min / n_max) ** ranks).astype(np.int64)
    sizes = np.clip(sizes, n_min, n_max)
    order = list(config.head_classes) + list(config.tail_classes)
    counts = np.empty(c, dtype=np.int64)
    counts[order] = sizes
    return counts


def _render(code_dc, code_amp, wavevector, phase, shift, shape):
    channels, t_len, h_len, w_len = shape
    t = (np.arange(t_len) + shift)[:, None, None] / t_len
    h = np.arange(h_len)[None, :, None] / h_len
    w = np.arange(w_len)[None, None, :] / w_len
    kt, kh, kw = wavevector
    angle = 2 * np.pi * (kt * t + kh * h + kw * w)
    out = np.empty(shape)
    for ch in range(channels):
        out[ch] = code_dc[ch] + code_amp[ch] * np.cos(angle + phase[ch])
    return out


def generate(config: DatasetConfig) -> Dataset:
    rng = np.random.default_rng(config.seed)
    counts = class_sizes(config)
    c = config.num_classes
    sigma = config.noise_sigma

    # per-stream fixed geometry, per-class latent codes
    waves, phases, dc_codes, amp_codes = [], [], [], []
    for m in range(NUM_STREAMS):
        ch = config.channels[m]
        sep = config.class_separation[m]
        waves.append((int(rng.integers(1, 3)), int(rng.integers(0, 2)), int(rng.integers(0, 2))))
        phases.append(rng.uniform(0, 2 * np.pi, size=ch))
        dc_codes.append(sep * rng.standard_normal((c, ch)))
        amp_codes.append(sep * np.abs(rng.standard_normal((c, ch))))

    labels = np.repeat(np.arange(c), counts)
    n = len(labels)
    streams = [np.empty((n,) + config.stream_shape(m)) for m in range(NUM_STREAMS)]
    for i, y in enumerate(labels):
        shift = int(rng.integers(0, config.snippet_len))
        for m in range(NUM_STREAMS):
            shape = config.stream_shape(m)
            ch = shape[0]
            dc = dc_codes[m][y] + sigma * rng.standard_normal(ch)
            amp = amp_codes[m][y] + sigma * rng.standard_normal(ch)
            x = _render(dc, amp, waves[m], phases[m], shift, shape)
            streams[m][i] = x + sigma * rng.standard_normal(shape)
    streams = [s.astype("<f4").astype(np.float64) for s in streams]
    return Dataset(tuple(streams), labels, c, config.seed, config.head_classes)


def split(dataset: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified train/test split leaving at least one test sample per class."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for y in range(dataset.num_classes):
        members = np.flatnonzero(dataset.labels == y)
        if len(members) == 0:
            continue
        if len(members) < 2:
            raise ClassTooSmallError(f"class {y} has {len(members)} sample(s); need >= 2 to split")
        members = rng.permutation(members)
        n_train = int(np.clip(round(train_fraction * len(members)), 1, len(members) - 1))
        train_idx.extend(members[:n_train])
        test_idx.extend(members[n_train:])
    return dataset.subset(np.sort(train_idx)), dataset.subset(np.sort(test_idx))


def write_dataset(dataset: Dataset, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    c, t, h, w = dataset.streams[0].shape[1:]
    manifest = {
        "version": FORMAT_VERSION,
        "num_classes": int(dataset.num_classes),
        "snippet_len": int(t),
        "height": int(h),
        "width": int(w),
        "channels": [int(ch) for ch in dataset.channels],
        "labels": [int(y) for y in dataset.labels],
        "class_counts": [int(n) for n in dataset.class_counts],
        "seed": int(dataset.seed),
        "head_classes": [int(y) for y in dataset.head_classes],
        "dtype": "<f4",
    }
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    for m, stream in enumerate(dataset.streams):
        (directory / f"stream{m}.bin").write_bytes(stream.astype("<f4").tobytes())


def read_dataset(directory) -> Dataset:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
    except json.JSONDecodeError as exc:
        raise MalformedManifestError(f"manifest.json is not valid JSON: {exc}") from exc
    if not isinstance(manifest, dict):
        raise MalformedManifestError("manifest.json must hold an object")
    missing = [k for k in MANIFEST_KEYS if k not in manifest]
    if missing:
        raise MalformedManifestError(f"manifest missing keys: {missing}")
    if manifest["version"] != FORMAT_VERSION:
        raise MalformedManifestError(f"unsupported dataset version {manifest['version']}")
    channels = manifest["channels"]
    if not isinstance(channels, list) or len(channels) != NUM_STREAMS:
        raise MalformedManifestError("channels must list three integers")
    labels = np.asarray(manifest["labels"], dtype=np.int64)
    num_classes = int(manifest["num_classes"])
    counts = np.bincount(labels, minlength=num_classes) if len(labels) else np.zeros(num_classes, int)
    if list(counts) != list(manifest["class_counts"]):
        raise ShapeError("class_counts disagree with labels")
    t, h, w = manifest["snippet_len"], manifest["height"], manifest["width"]
    n = len(labels)
    streams = []
    for m, ch in enumerate(channels):
        raw = (directory / f"stream{m}.bin").read_bytes()
        expected = n * ch * t * h * w * 4
        if len(raw) != expected:
            raise TruncatedBlobError(
                f"stream{m}.bin holds {len(raw)} bytes, manifest implies {expected}"
            )
        data = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        streams.append(data.reshape(n, ch, t, h, w))
    head = tuple(manifest.get("head_classes", (0, 1, 2)))
    return Dataset(tuple(streams), labels, num_classes, int(manifest["seed"]), head)
