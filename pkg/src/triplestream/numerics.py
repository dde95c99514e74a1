"""Dense float64 tensors with a small reverse-mode autodiff tape.

Tensors are plain ``numpy.ndarray`` objects of dtype float64.  A :class:`Graph`
records operations in the order they are applied, so node ids are already a
topological order and :meth:`Graph.backward` is a single reverse sweep.

Elementwise binary ops accept equal shapes, or a second operand whose shape is
a trailing suffix of the first (bias rows); nothing more general is broadcast.
Most ops accept an optional leading batch axis so a whole mini-batch can be
pushed through one graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .exceptions import (
    NonFiniteError,
    NonScalarOutputError,
    ShapeError,
    UnknownOpError,
    ZeroVectorError,
)

DISTANCE_FLOOR = 1e-12


def as_tensor(value) -> np.ndarray:
    return np.array(value, dtype=np.float64)


def _shape_error(op: str, *arrays: np.ndarray, detail: str = "") -> ShapeError:
    shapes = ", ".join(str(tuple(a.shape)) for a in arrays)
    msg = f"{op}: incompatible shapes {shapes}"
    return ShapeError(f"{msg} ({detail})" if detail else msg)


# --------------------------------------------------------------------------
# op kernels: forward(inputs, **attrs) -> (out, ctx)
#             backward(grad, inputs, out, ctx, needs, **attrs) -> list of grads
# --------------------------------------------------------------------------


def _check_binary(op, a, b):
    if a.shape == b.shape:
        return
    if b.ndim < a.ndim and a.shape[a.ndim - b.ndim:] == b.shape:
        return
    raise _shape_error(op, a, b, detail="shapes must match or the second must be a trailing suffix")


def _unbroadcast(grad, shape):
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    return grad


def _add_fwd(inputs):
    a, b = inputs
    _check_binary("add", a, b)
    return a + b, None


def _add_bwd(g, inputs, out, ctx, needs):
    a, b = inputs
    return [g, _unbroadcast(g, b.shape)]


def _sub_fwd(inputs):
    a, b = inputs
    _check_binary("sub", a, b)
    return a - b, None


def _sub_bwd(g, inputs, out, ctx, needs):
    a, b = inputs
    return [g, -_unbroadcast(g, b.shape)]


def _mul_fwd(inputs):
    a, b = inputs
    _check_binary("mul", a, b)
    return a * b, None


def _mul_bwd(g, inputs, out, ctx, needs):
    a, b = inputs
    return [g * b if needs[0] else None, _unbroadcast(g * a, b.shape) if needs[1] else None]


def _scalar_mul_fwd(inputs, c):
    return inputs[0] * float(c), None


def _scalar_mul_bwd(g, inputs, out, ctx, needs, c):
    return [g * float(c)]


def _matmul_fwd(inputs):
    a, b = inputs
    if a.ndim not in (1, 2) or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise _shape_error("matmul", a, b)
    return a @ b, None


def _matmul_bwd(g, inputs, out, ctx, needs):
    a, b = inputs
    a2 = a if a.ndim == 2 else a[None, :]
    b2 = b if b.ndim == 2 else b[:, None]
    g2 = g.reshape(a2.shape[0], b2.shape[1])
    da = (g2 @ b2.T).reshape(a.shape) if needs[0] else None
    db = (a2.T @ g2).reshape(b.shape) if needs[1] else None
    return [da, db]


def _transpose_fwd(inputs):
    (a,) = inputs
    if a.ndim != 2:
        raise _shape_error("transpose", a, detail="expected a matrix")
    return a.T.copy(), None


def _transpose_bwd(g, inputs, out, ctx, needs):
    return [g.T]


def _relu_fwd(inputs):
    return np.maximum(inputs[0], 0.0), None


def _relu_bwd(g, inputs, out, ctx, needs):
    # subgradient at exactly 0 is 0
    return [g * (inputs[0] > 0.0)]


def _exp_fwd(inputs):
    with np.errstate(over="ignore"):
        return np.exp(inputs[0]), None


def _exp_bwd(g, inputs, out, ctx, needs):
    return [g * out]


def _log_fwd(inputs):
    (x,) = inputs
    if np.any(x <= 0.0):
        raise NonFiniteError("log: input must be strictly positive")
    return np.log(x), None


def _log_bwd(g, inputs, out, ctx, needs):
    return [g / inputs[0]]


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _sigmoid_fwd(inputs):
    return _sigmoid(inputs[0]), None


def _sigmoid_bwd(g, inputs, out, ctx, needs):
    return [g * out * (1.0 - out)]


def _log_sigmoid_fwd(inputs):
    return -np.logaddexp(0.0, -inputs[0]), None


def _log_sigmoid_bwd(g, inputs, out, ctx, needs):
    return [g * _sigmoid(-inputs[0])]


def _mean_fwd(inputs, axis=None):
    (x,) = inputs
    if axis is not None and not -x.ndim <= axis < x.ndim:
        raise _shape_error("mean", x, detail=f"axis {axis} out of range")
    return np.asarray(x.mean(axis=axis)), None


def _mean_bwd(g, inputs, out, ctx, needs, axis=None):
    (x,) = inputs
    if axis is None:
        return [np.full(x.shape, float(g) / x.size)]
    return [np.broadcast_to(np.expand_dims(g, axis), x.shape) / x.shape[axis]]


def _gap_fwd(inputs):
    (x,) = inputs
    if x.ndim not in (4, 5):
        raise _shape_error("global-average-pool", x, detail="expected [C,T,H,W] or [B,C,T,H,W]")
    return x.mean(axis=(-3, -2, -1)), None


def _gap_bwd(g, inputs, out, ctx, needs):
    (x,) = inputs
    count = x.shape[-1] * x.shape[-2] * x.shape[-3]
    return [np.broadcast_to(g[..., None, None, None], x.shape) / count]


def _l2n_fwd(inputs):
    (x,) = inputs
    if x.ndim == 0:
        raise _shape_error("l2-normalize", x, detail="expected a vector")
    norms = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
    if np.any(norms == 0.0):
        raise ZeroVectorError("l2-normalize: cannot normalise the zero vector")
    return x / norms, norms


def _l2n_bwd(g, inputs, out, norms, needs):
    return [(g - out * np.sum(g * out, axis=-1, keepdims=True)) / norms]


def _softmax_fwd(inputs):
    (x,) = inputs
    if x.ndim == 0:
        raise _shape_error("softmax", x, detail="expected a vector")
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True), None


def _softmax_bwd(g, inputs, out, ctx, needs):
    return [out * (g - np.sum(g * out, axis=-1, keepdims=True))]


def _dist_fwd(inputs):
    a, b = inputs
    if a.shape != b.shape or a.ndim not in (1, 2):
        raise _shape_error("euclidean-distance", a, b)
    diff = a - b
    return np.sqrt(np.sum(diff * diff, axis=-1)), diff


def _dist_bwd(g, inputs, out, diff, needs):
    scale = np.asarray(g) / np.maximum(out, DISTANCE_FLOOR)
    da = diff * np.expand_dims(scale, -1)
    return [da, -da]


def _concat_fwd(inputs, axis=0):
    first = inputs[0]
    for other in inputs[1:]:
        if other.ndim != first.ndim or any(
            d1 != d2 for i, (d1, d2) in enumerate(zip(first.shape, other.shape))
            if i != axis % first.ndim
        ):
            raise _shape_error("concat", *inputs)
    return np.concatenate(inputs, axis=axis), None


def _concat_bwd(g, inputs, out, ctx, needs, axis=0):
    bounds = np.cumsum([x.shape[axis] for x in inputs])[:-1]
    return np.split(g, bounds, axis=axis)


def _reshape_fwd(inputs, shape):
    (x,) = inputs
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size or any(s <= 0 for s in shape):
        raise _shape_error("reshape", x, detail=f"cannot reshape to {shape}")
    return x.reshape(shape), None


def _reshape_bwd(g, inputs, out, ctx, needs, shape):
    return [g.reshape(inputs[0].shape)]


def _take_fwd(inputs, indices):
    (x,) = inputs
    idx = np.asarray(indices, dtype=np.intp)
    if x.ndim == 0 or idx.ndim != 1 or np.any(idx < 0) or np.any(idx >= x.shape[0]):
        raise _shape_error("take", x, detail="indices out of range")
    return x[idx], idx


def _take_bwd(g, inputs, out, idx, needs, indices):
    grad = np.zeros_like(inputs[0])
    np.add.at(grad, idx, g)
    return [grad]


def _conv_geometry(x, k, padding):
    kt, kh, kw = k.shape[2:]
    if padding is None:
        padding = ((kt - 1) // 2, (kh - 1) // 2, (kw - 1) // 2)
    pt, ph, pw = (int(p) for p in padding)
    _, _, t, h, w = x.shape
    tp, hp, wp = t + 2 * pt, h + 2 * ph, w + 2 * pw
    to, ho, wo = tp - kt + 1, hp - kh + 1, wp - kw + 1
    return (pt, ph, pw), (tp, hp, wp), (to, ho, wo)


def _conv3d_fwd(inputs, padding=None):
    x, k = inputs[:2]
    batched = x.ndim == 5
    if x.ndim not in (4, 5) or k.ndim != 5 or x.shape[-4] != k.shape[1]:
        raise _shape_error("conv3d", x, k, detail="expected [Cin,T,H,W] input and [Cout,Cin,kt,kh,kw] kernel")
    if len(inputs) == 3 and inputs[2].shape != (k.shape[0],):
        raise _shape_error("conv3d", x, k, inputs[2], detail="bias must have one entry per output channel")
    xb = x if batched else x[None]
    (pt, ph, pw), (tp, hp, wp), (to, ho, wo) = _conv_geometry(xb, k, padding)
    if min(to, ho, wo) < 1:
        raise _shape_error("conv3d", x, k, detail="kernel larger than padded input")
    nb, cin, t, h, w = xb.shape
    cout, _, kt, kh, kw = k.shape
    # Channel-major padded volume, flattened per (channel, sample): every kernel
    # offset is then a contiguous shift and the whole conv is a single GEMM.
    xp = np.zeros((cin, nb, tp, hp, wp))
    xp[:, :, pt:pt + t, ph:ph + h, pw:pw + w] = xb.transpose(1, 0, 2, 3, 4)
    xf = xp.reshape(cin, nb, tp * hp * wp)
    n = (to - 1) * hp * wp + (ho - 1) * wp + wo
    offsets = [a * hp * wp + b * wp + c for a in range(kt) for b in range(kh) for c in range(kw)]
    col = np.empty((cin, len(offsets), nb, n))
    for i, off in enumerate(offsets):
        col[:, i] = xf[:, :, off:off + n]
    col = col.reshape(cin * len(offsets), nb * n)
    flat = k.reshape(cout, -1) @ col
    full = np.zeros((cout, nb, to * hp * wp))
    full[:, :, :n] = flat.reshape(cout, nb, n)
    out = full.reshape(cout, nb, to, hp, wp)[:, :, :, :ho, :wo]
    if len(inputs) == 3:
        out = out + inputs[2][:, None, None, None, None]
    out = np.ascontiguousarray(out.transpose(1, 0, 2, 3, 4))
    return (out if batched else out[0]), (col, offsets, n)


def _conv3d_bwd(g, inputs, out, ctx, needs, padding=None):
    x, k = inputs[:2]
    col, offsets, n = ctx
    batched = x.ndim == 5
    xb = x if batched else x[None]
    gb = g if batched else g[None]
    (pt, ph, pw), (tp, hp, wp), (to, ho, wo) = _conv_geometry(xb, k, padding)
    nb, cin, t, h, w = xb.shape
    cout = k.shape[0]
    gfull = np.zeros((cout, nb, to, hp, wp))
    gfull[:, :, :, :ho, :wo] = gb.transpose(1, 0, 2, 3, 4)
    gf = np.ascontiguousarray(gfull.reshape(cout, nb, -1)[:, :, :n]).reshape(cout, nb * n)
    grads = [None, None]
    if needs[1]:
        grads[1] = (gf @ col.T).reshape(k.shape)
    if needs[0]:
        dcol = (k.reshape(cout, -1).T @ gf).reshape(cin, len(offsets), nb, n)
        dxf = np.zeros((cin, nb, tp * hp * wp))
        for i, off in enumerate(offsets):
            dxf[:, :, off:off + n] += dcol[:, i]
        dx = dxf.reshape(cin, nb, tp, hp, wp)[:, :, pt:pt + t, ph:ph + h, pw:pw + w]
        dx = np.ascontiguousarray(dx.transpose(1, 0, 2, 3, 4))
        grads[0] = dx if batched else dx[0]
    if len(inputs) == 3:
        grads.append(gb.sum(axis=(0, 2, 3, 4)) if needs[2] else None)
    return grads


OPS: dict[str, tuple[Callable, Callable]] = {
    "matmul": (_matmul_fwd, _matmul_bwd),
    "transpose": (_transpose_fwd, _transpose_bwd),
    "conv3d": (_conv3d_fwd, _conv3d_bwd),
    "add": (_add_fwd, _add_bwd),
    "sub": (_sub_fwd, _sub_bwd),
    "mul": (_mul_fwd, _mul_bwd),
    "scalar-mul": (_scalar_mul_fwd, _scalar_mul_bwd),
    "relu": (_relu_fwd, _relu_bwd),
    "mean-over-axis": (_mean_fwd, _mean_bwd),
    "global-average-pool": (_gap_fwd, _gap_bwd),
    "l2-normalize": (_l2n_fwd, _l2n_bwd),
    "softmax": (_softmax_fwd, _softmax_bwd),
    "log": (_log_fwd, _log_bwd),
    "exp": (_exp_fwd, _exp_bwd),
    "sigmoid": (_sigmoid_fwd, _sigmoid_bwd),
    "log-sigmoid": (_log_sigmoid_fwd, _log_sigmoid_bwd),
    "euclidean-distance": (_dist_fwd, _dist_bwd),
    "concat": (_concat_fwd, _concat_bwd),
    "reshape": (_reshape_fwd, _reshape_bwd),
    "take": (_take_fwd, _take_bwd),
}


# --------------------------------------------------------------------------
# parameters and tape
# --------------------------------------------------------------------------


class ParamStore:
    """Named trainable tensors, each paired with a gradient slot of equal shape."""

    def __init__(self):
        self._values: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}

    def add(self, name: str, value) -> None:
        if name in self._values:
            raise KeyError(f"parameter {name!r} already exists")
        value = as_tensor(value)
        self._values[name] = value
        self._grads[name] = np.zeros_like(value)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._values[name]

    def __setitem__(self, name: str, value) -> None:
        value = as_tensor(value)
        if value.shape != self._values[name].shape:
            raise ShapeError(
                f"parameter {name!r}: shape {value.shape} != {self._values[name].shape}"
            )
        self._values[name] = value

    def __contains__(self, name) -> bool:
        return name in self._values

    def __iter__(self):
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def names(self) -> list[str]:
        return list(self._values)

    def items(self):
        return self._values.items()

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def accumulate(self, name: str, grad: np.ndarray) -> None:
        self._grads[name] = self._grads[name] + grad

    def zero_grad(self) -> None:
        for name, value in self._values.items():
            self._grads[name] = np.zeros_like(value)

    def copy(self) -> "ParamStore":
        clone = ParamStore()
        for name, value in self._values.items():
            clone.add(name, value.copy())
        return clone

    def equals(self, other: "ParamStore") -> bool:
        """Bit-exact equality of names, shapes and values."""
        if self.names() != other.names():
            return False
        return all(np.array_equal(self[n], other[n]) for n in self)


@dataclass
class Node:
    op: str
    inputs: tuple[int, ...]
    value: np.ndarray
    attrs: dict[str, Any] = field(default_factory=dict)
    ctx: Any = None
    requires_grad: bool = False
    param: str | None = None


class Graph:
    """Append-only computation tape.

    Leaves are either constants or parameters bound from a :class:`ParamStore`.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._param_ids: dict[str, int] = {}
        self._grads: list[np.ndarray | None] | None = None

    def __len__(self):
        return len(self.nodes)

    def _append(self, node: Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def constant(self, value) -> int:
        return self._append(Node("const", (), as_tensor(value)))

    def param(self, store: ParamStore, name: str) -> int:
        if name not in self._param_ids:
            self._param_ids[name] = self._append(
                Node("param", (), store[name], requires_grad=True, param=name)
            )
        return self._param_ids[name]

    def value(self, node_id: int) -> np.ndarray:
        return self.nodes[node_id].value

    def forward(self, op: str, *inputs: int, **attrs) -> int:
        if op not in OPS:
            raise UnknownOpError(f"unknown op-kind {op!r}")
        for i in inputs:
            if not 0 <= i < len(self.nodes):
                raise ValueError(f"{op}: unknown input node {i}")
        fwd, _ = OPS[op]
        values = [self.nodes[i].value for i in inputs]
        out, ctx = fwd(values, **attrs)
        out = np.asarray(out, dtype=np.float64)
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(f"{op}: produced non-finite values")
        requires = any(self.nodes[i].requires_grad for i in inputs)
        return self._append(Node(op, tuple(inputs), out, attrs, ctx, requires))

    # convenience wrappers, one per op
    def matmul(self, a, b): return self.forward("matmul", a, b)
    def transpose(self, a): return self.forward("transpose", a)
    def conv3d(self, x, k, bias=None, padding=None):
        inputs = (x, k) if bias is None else (x, k, bias)
        return self.forward("conv3d", *inputs, padding=padding)
    def add(self, a, b): return self.forward("add", a, b)
    def sub(self, a, b): return self.forward("sub", a, b)
    def mul(self, a, b): return self.forward("mul", a, b)
    def scalar_mul(self, a, c): return self.forward("scalar-mul", a, c=c)
    def relu(self, a): return self.forward("relu", a)
    def mean(self, a, axis=None): return self.forward("mean-over-axis", a, axis=axis)
    def global_average_pool(self, a): return self.forward("global-average-pool", a)
    def l2_normalize(self, a): return self.forward("l2-normalize", a)
    def softmax(self, a): return self.forward("softmax", a)
    def log(self, a): return self.forward("log", a)
    def exp(self, a): return self.forward("exp", a)
    def sigmoid(self, a): return self.forward("sigmoid", a)
    def log_sigmoid(self, a): return self.forward("log-sigmoid", a)
    def distance(self, a, b): return self.forward("euclidean-distance", a, b)
    def concat(self, parts, axis=0): return self.forward("concat", *parts, axis=axis)
    def reshape(self, a, shape): return self.forward("reshape", a, shape=tuple(shape))
    def take(self, a, indices): return self.forward("take", a, indices=tuple(int(i) for i in indices))

    def sum(self, a, axis=None):
        n = self.value(a).size if axis is None else self.value(a).shape[axis]
        return self.scalar_mul(self.mean(a, axis=axis), n)

    def backward(self, output: int, store: ParamStore | None = None) -> None:
        """Accumulate d(output)/d(leaf) into ``store`` for every parameter leaf."""
        out_value = self.nodes[output].value
        if out_value.size != 1:
            raise NonScalarOutputError(
                f"backward needs a scalar output, got shape {out_value.shape}"
            )
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[output] = np.ones_like(out_value)
        for idx in range(output, -1, -1):
            node = self.nodes[idx]
            g = grads[idx]
            if g is None or not node.requires_grad:
                continue
            if node.op == "param":
                if store is not None:
                    store.accumulate(node.param, g)
                continue
            if node.op == "const":
                continue
            needs = [self.nodes[i].requires_grad for i in node.inputs]
            _, bwd = OPS[node.op]
            values = [self.nodes[i].value for i in node.inputs]
            in_grads = bwd(g, values, node.value, node.ctx, needs, **node.attrs)
            for i, need, ig in zip(node.inputs, needs, in_grads):
                if not need or ig is None:
                    continue
                ig = np.asarray(ig).reshape(self.nodes[i].value.shape)
                grads[i] = ig if grads[i] is None else grads[i] + ig
        self._grads = grads

    def grad(self, node_id: int) -> np.ndarray | None:
        """Gradient of the last backward output w.r.t. ``node_id``."""
        if self._grads is None:
            return None
        return self._grads[node_id]


# --------------------------------------------------------------------------
# optimisation helpers
# --------------------------------------------------------------------------


def sgd_step(params: ParamStore, lr: float) -> None:
    """Plain SGD update followed by zeroing every gradient slot."""
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for name in params:
        if not np.all(np.isfinite(params.grad(name))):
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
    for name in params:
        params[name] = params[name] - lr * params.grad(name)
    params.zero_grad()


def maxnorm_project(matrix, delta: float) -> np.ndarray:
    """Rescale every row whose L2 norm exceeds ``delta`` back onto the ball."""
    matrix = as_tensor(matrix)
    if matrix.ndim != 2:
        raise ShapeError(f"maxnorm_project: expected a matrix, got shape {matrix.shape}")
    if not delta > 0:
        raise ValueError("delta must be positive")
    norms = np.sqrt(np.sum(matrix * matrix, axis=1, keepdims=True))
    scale = np.ones_like(norms)
    over = norms > delta
    scale[over] = delta / norms[over]
    return matrix * scale


def finite_diff_gradient(function: Callable[[np.ndarray], float], point, epsilon: float = 1e-5) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function."""
    x = as_tensor(point)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + epsilon
        fp = float(function(x.copy()))
        flat[i] = orig - epsilon
        fm = float(function(x.copy()))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * epsilon)
    return grad
