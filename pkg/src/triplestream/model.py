"""Per-stream snippet encoders, fusion heads and the classification head.

Graph builders take a :class:`~triplestream.numerics.Graph` plus node ids and
return node ids, so the whole forward pass stays differentiable.  Every builder
works on a leading batch axis; the module-level helpers at the bottom accept
single samples too and return plain arrays.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import ConfigError, ShapeError
from .numerics import Graph, ParamStore

FUSION_METHODS = ("avg", "elem", "conv", "none")
HEAD_WEIGHT = "head.weight"


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int = 9
    input_channels: tuple[int, ...] = (3, 2, 3)
    encoding_dim: int = 128
    embedding_dim: int | None = None
    conv_channels: tuple[int, ...] = (8, 16)
    kernel: tuple[int, int, int] = (3, 3, 3)
    fusion_method: str = "conv"
    conv_fusion_out_channels: int = 8
    # indices into input_channels of the streams actually used
    streams: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self):
        for name in ("input_channels", "conv_channels", "kernel", "streams"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if self.embedding_dim is None:
            object.__setattr__(self, "embedding_dim", self.encoding_dim)
        if self.encoding_dim < 1 or self.embedding_dim < 1:
            raise ConfigError("encoding_dim and embedding_dim must be >= 1")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.fusion_method not in FUSION_METHODS:
            raise ConfigError(f"fusion_method must be one of {FUSION_METHODS}")
        if not self.streams or len(set(self.streams)) != len(self.streams):
            raise ConfigError("streams must be a non-empty list of distinct ids")
        if any(not 0 <= s < len(self.input_channels) for s in self.streams):
            raise ConfigError("stream id out of range")
        if self.fusion_method == "none" and len(self.streams) != 1:
            raise ConfigError("fusion_method 'none' needs exactly one stream")
        if len(self.kernel) != 3 or any(k < 1 or k % 2 == 0 for k in self.kernel):
            raise ConfigError("kernel must be three odd sizes")
        if not self.conv_channels or min(self.conv_channels) < 1:
            raise ConfigError("conv_channels must be positive")
        if self.conv_fusion_out_channels < 1:
            raise ConfigError("conv_fusion_out_channels must be >= 1")

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


def _glorot(rng, shape, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: ModelConfig, seed: int = 0) -> ParamStore:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = ParamStore()
    ksize = int(np.prod(config.kernel))
    n = config.encoding_dim
    for m in config.streams:
        cin = config.input_channels[m]
        for layer, cout in enumerate(config.conv_channels):
            params.add(f"enc{m}.conv{layer}.weight",
                       _glorot(rng, (cout, cin) + config.kernel, cin * ksize, cout * ksize))
            params.add(f"enc{m}.conv{layer}.bias", np.zeros(cout))
            cin = cout
        params.add(f"enc{m}.fc.weight", _glorot(rng, (n, cin), cin, n))
        params.add(f"enc{m}.fc.bias", np.zeros(n))
    fused_in = n
    if config.fusion_method == "conv":
        s, co = len(config.streams), config.conv_fusion_out_channels
        params.add("fuse.conv.weight", _glorot(rng, (co, 1, s, 1, 3), s * 3, co * s * 3))
        params.add("fuse.conv.bias", np.zeros(co))
        fused_in = co * n
    params.add("fuse.fc.weight", _glorot(rng, (config.embedding_dim, fused_in), fused_in, config.embedding_dim))
    params.add("fuse.fc.bias", np.zeros(config.embedding_dim))
    params.add(HEAD_WEIGHT, _glorot(rng, (config.num_classes, config.embedding_dim),
                                    config.embedding_dim, config.num_classes))
    params.add("head.bias", np.zeros(config.num_classes))
    return params


def linear(g: Graph, params: ParamStore, x: int, prefix: str) -> int:
    """``x @ W.T + b`` for ``W`` of shape [out, in]."""
    w = g.param(params, f"{prefix}.weight")
    b = g.param(params, f"{prefix}.bias")
    return g.add(g.matmul(x, g.transpose(w)), b)


def _conv_block(g, params, x, prefix, padding=None):
    w = g.param(params, f"{prefix}.weight")
    b = g.param(params, f"{prefix}.bias")
    return g.forward("conv3d", x, w, b, padding=padding)


def encode_stream_node(g: Graph, params: ParamStore, x: int, stream: int, config: ModelConfig) -> int:
    """conv3d+relu stack, global average pool, linear to ``encoding_dim``.

    ``x`` is a node of shape [B, C_m, T, H, W]; the result is [B, n].
    """
    expected = config.input_channels[stream]
    shape = g.value(x).shape
    if len(shape) != 5 or shape[1] != expected:
        raise ShapeError(f"stream {stream}: expected [B, {expected}, T, H, W], got {shape}")
    h = x
    for layer in range(len(config.conv_channels)):
        h = g.relu(_conv_block(g, params, h, f"enc{stream}.conv{layer}"))
    return linear(g, params, g.global_average_pool(h), f"enc{stream}.fc")


def fuse_node(g: Graph, params: ParamStore, encodings: list[int], config: ModelConfig) -> int:
    """Fuse per-stream encodings ([B, n] each) into a [B, embedding_dim] embedding."""
    if len(encodings) != len(config.streams):
        raise ShapeError(f"expected {len(config.streams)} encodings, got {len(encodings)}")
    shapes = {g.value(e).shape for e in encodings}
    if len(shapes) != 1:
        raise ShapeError(f"fuse: encodings differ in shape {sorted(shapes)}")
    (batch, n), = shapes
    method = config.fusion_method
    if method in ("avg", "none"):
        acc = encodings[0]
        for e in encodings[1:]:
            acc = g.add(acc, e)
        return linear(g, params, g.scalar_mul(acc, 1.0 / len(encodings)), "fuse.fc")
    if method == "elem":
        acc = encodings[0]
        for e in encodings[1:]:
            acc = g.mul(acc, e)
        out = linear(g, params, g.l2_normalize(acc), "fuse.fc")
        # keep embeddings on the unit sphere after the final linear layer
        return g.l2_normalize(out)
    # conv: stack streams into a [B, 1, S, 1, n] volume
    s = len(encodings)
    volume = g.concat([g.reshape(e, (batch, 1, 1, 1, n)) for e in encodings], axis=2)
    h = g.relu(_conv_block(g, params, volume, "fuse.conv", padding=(0, 0, 1)))
    flat = g.reshape(h, (batch, config.conv_fusion_out_channels * n))
    return linear(g, params, flat, "fuse.fc")


def classify_node(g: Graph, params: ParamStore, embedding: int) -> int:
    return linear(g, params, embedding, "head")


def forward_node(g: Graph, params: ParamStore, streams, config: ModelConfig) -> tuple[int, int]:
    """Full forward pass.  ``streams`` is indexable by stream id; returns (embedding, logits)."""
    encodings = []
    for m in config.streams:
        x = streams[m]
        node = x if isinstance(x, (int, np.integer)) else g.constant(x)
        encodings.append(encode_stream_node(g, params, node, m, config))
    emb = fuse_node(g, params, encodings, config)
    return emb, classify_node(g, params, emb)


# ---------------------------------------------------------------------------
# array-level helpers
# ---------------------------------------------------------------------------


def _batched(x, ndim):
    x = np.asarray(x, dtype=np.float64)
    return (x[None], True) if x.ndim == ndim - 1 else (x, False)


def encode_stream(x, params: ParamStore, stream: int, config: ModelConfig) -> np.ndarray:
    xb, single = _batched(x, 5)
    g = Graph()
    out = g.value(encode_stream_node(g, params, g.constant(xb), stream, config))
    return out[0] if single else out


def fuse(encodings, params: ParamStore, config: ModelConfig) -> np.ndarray:
    arrays = [_batched(e, 2) for e in encodings]
    single = arrays[0][1]
    g = Graph()
    out = g.value(fuse_node(g, params, [g.constant(a) for a, _ in arrays], config))
    return out[0] if single else out


def classify(embedding, params: ParamStore) -> np.ndarray:
    eb, single = _batched(embedding, 2)
    g = Graph()
    out = g.value(classify_node(g, params, g.constant(eb)))
    return out[0] if single else out


def embed(streams, params: ParamStore, config: ModelConfig, batch_size: int = 64) -> np.ndarray:
    """Embeddings for every sample of ``streams`` (a sequence of [N, C_m, T, H, W] arrays)."""
    n = len(streams[config.streams[0]])
    out = np.empty((n, config.embedding_dim))
    for start in range(0, n, batch_size):
        sl = slice(start, min(start + batch_size, n))
        g = Graph()
        emb, _ = forward_node(g, params, {m: streams[m][sl] for m in config.streams}, config)
        out[sl] = g.value(emb)
    return out


def check_compatible(config: ModelConfig, channels, frame_shape=None) -> None:
    """Raise ShapeError when a dataset's stream channels don't fit the model."""
    channels = tuple(channels)
    for m in config.streams:
        if m >= len(channels) or channels[m] != config.input_channels[m]:
            raise ShapeError(
                f"stream {m}: model expects {config.input_channels[m]} channels, data has "
                f"{channels[m] if m < len(channels) else 'none'}"
            )
