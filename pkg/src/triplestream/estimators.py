"""sklearn-compatible wrappers around the training, k-NN and t-SNE code."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .datagen import Dataset
from .evaluator import EmbeddingIndex, knn_predict_batch
from .losses import LossConfig
from .model import ModelConfig, embed
from .projection import TsneConfig, tsne
from .trainer import TrainConfig, train
from .validation import unflatten_streams


class KNNEmbeddingClassifier(ClassifierMixin, BaseEstimator):
    """Exact k-NN over precomputed embeddings with the deterministic tie chain."""

    def __init__(self, n_neighbors: int = 5):
        self.n_neighbors = n_neighbors

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, codes = np.unique(y, return_inverse=True)
        self.index_ = EmbeddingIndex(X, codes)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "index_")
        X = check_array(X, dtype=np.float64)
        return self.classes_[knn_predict_batch(self.index_, X, self.n_neighbors)]


class TripleStreamClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Multi-stream 3D-conv embedding network trained with a metric loss.

    ``X`` rows are flattened stream blocks (see :mod:`triplestream.validation`).
    ``transform`` returns embeddings; ``predict`` is k-NN against the training
    embeddings.
    """

    def __init__(self, loss="RC", fusion_method="conv", streams=(0, 1, 2), channels=(3, 2, 3),
                 frame_shape=(8, 8, 8), conv_channels=(8, 16), encoding_dim=128, epochs=10,
                 lr=1e-2, samples_per_class=4, n_neighbors=5, random_state=0):
        self.loss = loss
        self.fusion_method = fusion_method
        self.streams = streams
        self.channels = channels
        self.frame_shape = frame_shape
        self.conv_channels = conv_channels
        self.encoding_dim = encoding_dim
        self.epochs = epochs
        self.lr = lr
        self.samples_per_class = samples_per_class
        self.n_neighbors = n_neighbors
        self.random_state = random_state

    def _streams(self, X):
        return unflatten_streams(X, self.channels, self.frame_shape)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, codes = np.unique(y, return_inverse=True)
        n_classes = len(self.classes_)
        self.model_config_ = ModelConfig(
            num_classes=n_classes, input_channels=tuple(self.channels), encoding_dim=self.encoding_dim,
            conv_channels=tuple(self.conv_channels), fusion_method=self.fusion_method,
            streams=tuple(self.streams),
        )
        per_batch = min(8, n_classes)
        train_config = TrainConfig(
            batch_size=per_batch * self.samples_per_class, classes_per_batch=per_batch,
            samples_per_class=self.samples_per_class, epochs=self.epochs, lr=self.lr,
            k=self.n_neighbors, seed=self.random_state,
        )
        data = Dataset(self._streams(X), codes.astype(np.int64), n_classes, self.random_state, ())
        ckpt, self.history_ = train(train_config, self.model_config_, LossConfig(family=self.loss),
                                    data, None, head_classes=())
        self.params_ = ckpt.params
        self.index_ = EmbeddingIndex(embed(data.streams, self.params_, self.model_config_), codes)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        return embed(self._streams(X), self.params_, self.model_config_)

    def predict(self, X):
        codes = knn_predict_batch(self.index_, self.transform(X), self.n_neighbors)
        return self.classes_[codes]


class ExactTSNE(TransformerMixin, BaseEstimator):
    """Exact t-SNE to two dimensions; ``kl_trace_`` holds KL per iteration."""

    def __init__(self, perplexity=30.0, iterations=500, learning_rate=100.0,
                 early_exaggeration=4.0, exaggeration_iterations=50, random_state=0):
        self.perplexity = perplexity
        self.iterations = iterations
        self.learning_rate = learning_rate
        self.early_exaggeration = early_exaggeration
        self.exaggeration_iterations = exaggeration_iterations
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64, ensure_min_samples=3)
        config = TsneConfig(perplexity=self.perplexity, iterations=self.iterations,
                            learning_rate=self.learning_rate, early_exaggeration=self.early_exaggeration,
                            exaggeration_iterations=self.exaggeration_iterations, seed=self.random_state)
        self.embedding_, self.kl_trace_ = tsne(X, config)
        self.kl_divergence_ = float(self.kl_trace_[-1])
        self.n_features_in_ = X.shape[1]
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X).embedding_
