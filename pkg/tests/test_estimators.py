import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from triplestream.datagen import DatasetConfig, generate, split
from triplestream.estimators import ExactTSNE, KNNEmbeddingClassifier, TripleStreamClassifier
from triplestream.exceptions import ShapeError
from triplestream.validation import flatten_streams, unflatten_streams

from oracles import brute_force_knn

FRAMES = (3, 3, 3)


@pytest.fixture(scope="module")
def data():
    ds = generate(DatasetConfig(samples_for_largest_class=24, imbalance_ratio=3, snippet_len=3, height=3, width=3))
    tr, te = split(ds, 0.8, 0)
    return flatten_streams(tr.streams), tr.labels, flatten_streams(te.streams), te.labels


def test_flatten_roundtrip():
    rng = np.random.default_rng(0)
    streams = [rng.normal(size=(4, c) + FRAMES) for c in (3, 2, 3)]
    X = flatten_streams(streams)
    assert X.shape == (4, 8 * 27)
    for a, b in zip(unflatten_streams(X, (3, 2, 3), FRAMES), streams):
        np.testing.assert_array_equal(a, b)


def test_unflatten_wrong_width():
    with pytest.raises(ShapeError):
        unflatten_streams(np.zeros((2, 10)), (3, 2, 3), FRAMES)


def test_knn_classifier_matches_oracle():
    rng = np.random.default_rng(1)
    X, y = rng.normal(size=(50, 3)), rng.choice(["a", "b", "c"], size=50)
    q = rng.normal(size=(30, 3))
    clf = KNNEmbeddingClassifier(n_neighbors=3).fit(X, y)
    codes = np.unique(y, return_inverse=True)[1]
    expected = [clf.classes_[brute_force_knn(X, codes, row, 3)] for row in q]
    assert clf.predict(q).tolist() == expected


def test_knn_unfitted():
    with pytest.raises(NotFittedError):
        KNNEmbeddingClassifier().predict(np.zeros((1, 2)))


def test_classifier_params_and_clone():
    clf = TripleStreamClassifier(loss="WB", epochs=3)
    assert clf.get_params()["loss"] == "WB"
    twin = clone(clf)
    assert twin.get_params() == clf.get_params() and twin is not clf


def test_classifier_fit_predict_transform(data):
    Xtr, ytr, Xte, yte = data
    clf = TripleStreamClassifier(frame_shape=FRAMES, conv_channels=(2,), encoding_dim=6, epochs=2, n_neighbors=3)
    clf.fit(Xtr, ytr + 10)  # arbitrary label values
    pred = clf.predict(Xte)
    assert set(pred) <= set(ytr + 10)
    assert clf.transform(Xte).shape == (len(Xte), 6)
    assert 0 <= clf.score(Xte, yte + 10) <= 1
    assert len(clf.history_) == 2


def test_tsne_estimator():
    X = np.random.default_rng(2).normal(size=(30, 4))
    est = ExactTSNE(perplexity=5.0, iterations=150)
    Y = est.fit_transform(X)
    assert Y.shape == (30, 2)
    assert est.kl_trace_[-1] < est.kl_trace_[0] and est.kl_divergence_ == est.kl_trace_[-1]
