"""Randomised gradient-check cases shared by the unit and acceptance suites.

Each case is a ParamStore plus a builder ``build(g, store) -> scalar node``;
every listed parameter is compared against central finite differences.
"""

import numpy as np

from triplestream import losses, model
from triplestream.model import ModelConfig
from triplestream.numerics import Graph, ParamStore, finite_diff_gradient
from triplestream.projection import calibrate_affinities, kl_divergence, kl_gradient

GRAD_TOLERANCE = 1e-4
_FLOOR = 1e-6


def rel_error(analytic, numeric) -> float:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), _FLOOR)
    return float(np.max(np.abs(analytic - numeric) / scale)) if analytic.size else 0.0


def check(store, build, names=None, eps=1e-5) -> float:
    """Worst relative error between backward() and finite differences."""
    store.zero_grad()
    g = Graph()
    g.backward(build(g, store), store)
    worst = 0.0
    for name in names or store.names():
        analytic = store.grad(name).copy()
        saved = store[name]

        def f(v, name=name):
            store[name] = v
            h = Graph()
            return float(h.value(build(h, store)))

        numeric = finite_diff_gradient(f, saved.copy(), eps)
        store[name] = saved
        worst = max(worst, rel_error(analytic, numeric))
    return worst


def _store(rng, **shapes):
    s = ParamStore()
    for name, shape in shapes.items():
        s.add(name, rng.normal(size=shape))
    return s


# ---------------------------------------------------------------------------
# primitive composites
# ---------------------------------------------------------------------------


def case_matmul_relu_mean(rng):
    s = _store(rng, a=(3, 4), b=(4, 2))
    return s, lambda g, p: g.mean(g.relu(g.matmul(g.param(p, "a"), g.param(p, "b"))))


def case_softmax_log(rng):
    s = _store(rng, x=(4, 5))
    w = rng.normal(size=(4, 5))
    return s, lambda g, p: g.mean(g.mul(g.log(g.softmax(g.param(p, "x"))), g.constant(w)))


def case_l2norm_distance(rng):
    s = _store(rng, a=(3, 4), b=(3, 4))

    def build(g, p):
        return g.mean(g.distance(g.l2_normalize(g.param(p, "a")), g.param(p, "b")))
    return s, build


def case_sigmoid_exp(rng):
    s = _store(rng, x=(6,))
    return s, lambda g, p: g.mean(g.add(g.sigmoid(g.param(p, "x")),
                                        g.exp(g.scalar_mul(g.param(p, "x"), 0.3))))


def case_concat_reshape_take(rng):
    s = _store(rng, a=(2, 3), b=(2, 3))
    w = rng.normal(size=(3, 4))

    def build(g, p):
        c = g.concat([g.param(p, "a"), g.param(p, "b")], axis=0)
        r = g.reshape(c, (3, 4))
        t = g.take(r, [2, 0, 2])
        return g.mean(g.mul(g.sub(t, g.constant(w)), g.log_sigmoid(t)))
    return s, build


def case_conv3d_pool(rng):
    cin, cout = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    s = _store(rng, x=(2, cin, 3, 4, 3), k=(cout, cin, 3, 1, 3), bias=(cout,))
    w = rng.normal(size=(2, cout))

    def build(g, p):
        h = g.conv3d(g.param(p, "x"), g.param(p, "k"), g.param(p, "bias"))
        return g.mean(g.mul(g.global_average_pool(g.relu(h)), g.constant(w)))
    return s, build


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

_C = 4


def _batch(rng, per_class=2, classes=3, dim=3):
    labels = np.repeat(np.arange(classes), per_class)
    s = _store(rng, emb=(len(labels), dim), logits=(len(labels), _C))
    return s, labels


def _priors(rng):
    counts = rng.integers(1, 50, size=_C)
    labels = np.repeat(np.arange(_C), counts)
    return losses.estimate_priors(labels, _C)


def case_cross_entropy(rng):
    s, labels = _batch(rng)
    return s, lambda g, p: losses.cross_entropy_node(g, g.param(p, "logits"), labels)


def case_logit_adjusted(rng):
    s, labels = _batch(rng)
    pri, tau = _priors(rng), float(rng.uniform(0.5, 2))
    return s, lambda g, p: losses.logit_adjusted_ce_node(g, g.param(p, "logits"), labels, pri, tau)


def case_cb_focal(rng):
    s, labels = _batch(rng)
    pri, gamma = _priors(rng), float(rng.uniform(0.5, 2))
    return s, lambda g, p: losses.class_balanced_focal_node(
        g, g.param(p, "logits"), labels, pri, 0.99, gamma)


def case_cb_focal_literal(rng):
    s, labels = _batch(rng)
    pri = _priors(rng)
    return s, lambda g, p: losses.class_balanced_focal_node(
        g, g.param(p, "logits"), labels, pri, 0.9, 1.0, literal=True)


def _fixed_triplets(s, labels):
    return losses.mine_triplets(s["emb"], labels, "batch-hard")


def case_triplet(rng):
    s, labels = _batch(rng)
    tri = _fixed_triplets(s, labels)
    margin = float(rng.uniform(0.5, 3))  # large enough that most hinges are active

    def build(g, p):
        d_ap, d_an = losses.triplet_distances_node(g, g.param(p, "emb"), tri)
        return losses.triplet_loss_node(g, d_ap, d_an, margin)
    return s, build


def case_reciprocal(rng):
    s, labels = _batch(rng)
    tri = _fixed_triplets(s, labels)

    def build(g, p):
        d_ap, d_an = losses.triplet_distances_node(g, g.param(p, "emb"), tri)
        return losses.reciprocal_triplet_loss_node(g, d_ap, d_an)
    return s, build


def _family_case(family):
    def case(rng):
        s, labels = _batch(rng)
        config, pri = losses.LossConfig(family=family), _priors(rng)
        return s, lambda g, p: losses.family_loss_node(
            g, g.param(p, "emb"), g.param(p, "logits"), labels, config, pri)
    case.__name__ = f"case_family_{family}"
    return case


# ---------------------------------------------------------------------------
# model pieces
# ---------------------------------------------------------------------------


def _fusion_case(method):
    def case(rng):
        config = ModelConfig(num_classes=3, input_channels=(1, 1, 1), encoding_dim=4,
                             conv_channels=(1,), fusion_method=method, conv_fusion_out_channels=2)
        params = model.init_params(config, int(rng.integers(1 << 30)))
        s = ParamStore()
        for name, value in params.items():
            if name.startswith("fuse."):
                s.add(name, value + 0.1 * rng.normal(size=value.shape))
        for m in range(3):
            s.add(f"x{m}", rng.normal(size=(2, 4)))
        w = rng.normal(size=(2, 4))

        def build(g, p):
            emb = model.fuse_node(g, p, [g.param(p, f"x{m}") for m in range(3)], config)
            return g.mean(g.mul(emb, g.constant(w)))
        return s, build
    case.__name__ = f"case_fusion_{method}"
    return case


def case_encoder_stack(rng):
    config = ModelConfig(num_classes=3, input_channels=(2, 1, 1), encoding_dim=3,
                         conv_channels=(2, 2), streams=(0,), fusion_method="none")
    params = model.init_params(config, int(rng.integers(1 << 30)))
    s = ParamStore()
    for name, value in params.items():
        if name.startswith("enc0."):
            s.add(name, value + 0.05 * rng.normal(size=value.shape))
    s.add("x", rng.normal(size=(2, 2, 3, 3, 3)))
    w = rng.normal(size=(2, 3))

    def build(g, p):
        enc = model.encode_stream_node(g, p, g.param(p, "x"), 0, config)
        return g.mean(g.mul(enc, g.constant(w)))
    return s, build


GRAPH_CASES = [
    case_matmul_relu_mean,
    case_softmax_log,
    case_l2norm_distance,
    case_sigmoid_exp,
    case_concat_reshape_take,
    case_conv3d_pool,
    case_cross_entropy,
    case_logit_adjusted,
    case_cb_focal,
    case_cb_focal_literal,
    case_triplet,
    case_reciprocal,
    *[_family_case(f) for f in ("TL", "RC", "LA", "CB", "WB", "CE")],
    *[_fusion_case(m) for m in ("avg", "elem", "conv")],
    case_encoder_stack,
]


def run_graph_case(case, seed) -> float:
    store, build = case(np.random.default_rng(seed))
    return check(store, build)


def run_tsne_case(seed, n=6, dim=3) -> float:
    """Analytic KL gradient against finite differences of the KL objective."""
    rng = np.random.default_rng(seed)
    p = calibrate_affinities(rng.normal(size=(n, dim)), perplexity=2.5)
    y = rng.normal(size=(n, 2))
    numeric = finite_diff_gradient(lambda v: kl_divergence(p, v), y.copy())
    return rel_error(kl_gradient(p, y), numeric)
