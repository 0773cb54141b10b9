"""scikit-learn compatible wrappers.

All three estimators are transductive: ``fit`` sees the features of every
node plus a label vector in which ``-1`` marks nodes whose labels are hidden,
and ``predict`` / ``transform`` return one row per node of that same graph.

>>> clf = GRAFClassifier(attention_repeats=2, random_state=0)
>>> clf.fit(X, y_masked, networks=nets, val_idx=val)   # doctest: +SKIP
>>> clf.predict(X)[test]                                # doctest: +SKIP
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import seeding
from ._validation import (
    check_adjacency,
    check_features,
    check_networks,
    check_node_labels,
    training_split,
)
from .attention import AttentionBundle, AttentionHyperparams, extract_averaged_attention, train_attention_model
from .fusion import eliminate_edges, fuse
from .gcn import GcnHyperparams, train_gcn
from .graph import DatasetBundle, Splits


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _base_seed(random_state) -> int:
    if random_state is None:
        return int(np.random.SeedSequence().generate_state(1)[0])
    if isinstance(random_state, np.random.Generator):
        return int(random_state.integers(2**31))
    return int(random_state)


class _Transductive(ClassifierMixin, TransformerMixin, BaseEstimator):
    def _check_same_graph(self, X):
        check_is_fitted(self, "logits_")
        X = check_features(X)
        if X.shape != self.feature_shape_:
            raise ValueError(f"X has shape {X.shape}; this estimator was fitted on {self.feature_shape_}")
        return X

    def predict(self, X):
        self._check_same_graph(X)
        return self.classes_[self.logits_.argmax(axis=1)]

    def predict_proba(self, X):
        self._check_same_graph(X)
        return _softmax(self.logits_)

    def transform(self, X):
        self._check_same_graph(X)
        return self.embedding_

    def _prepare(self, X, y, val_idx):
        X = check_features(X)
        y = check_node_labels(y, X.shape[0])
        train, val = training_split(y, val_idx)
        if val.size == 0:
            raise ValueError("val_idx is required for early stopping")
        self.classes_ = np.arange(int(y.max()) + 1)
        self.feature_shape_ = X.shape
        return X, y, train, val


class GCNClassifier(_Transductive):
    """Two-layer GCN on one weighted adjacency."""

    def __init__(self, hidden_size=64, learning_rate=0.01, dropout=0.5, max_epochs=1000,
                 patience=30, min_epochs=200, random_state=None):
        self.hidden_size = hidden_size
        self.learning_rate = learning_rate
        self.dropout = dropout
        self.max_epochs = max_epochs
        self.patience = patience
        self.min_epochs = min_epochs
        self.random_state = random_state

    def _hp(self) -> GcnHyperparams:
        return GcnHyperparams(self.hidden_size, self.learning_rate, self.dropout,
                              self.max_epochs, self.patience, self.min_epochs)

    def fit(self, X, y, adjacency, val_idx=None):
        X, y, train, val = self._prepare(X, y, val_idx)
        edges, weights = check_adjacency(adjacency, X.shape[0])
        run = train_gcn(edges, weights, X, y, train, val, len(self.classes_), self._hp(),
                        _base_seed(self.random_state))
        self.model_ = run.model
        self.best_val_score_ = run.val_macro_f1
        self.n_epochs_ = run.log.epochs_run
        self.logits_ = run.logits
        self.embedding_ = run.embeddings
        return self


class HANClassifier(_Transductive):
    """Attention-only classifier: predictions come straight from the attention model."""

    def __init__(self, hidden_size=64, learning_rate=0.005, heads=8, semantic_dim=128, dropout=0.5,
                 max_epochs=200, patience=30, random_state=None):
        self.hidden_size = hidden_size
        self.learning_rate = learning_rate
        self.heads = heads
        self.semantic_dim = semantic_dim
        self.dropout = dropout
        self.max_epochs = max_epochs
        self.patience = patience
        self.random_state = random_state

    def _hp(self) -> AttentionHyperparams:
        return AttentionHyperparams(self.hidden_size, self.learning_rate, self.heads, self.semantic_dim,
                                    self.dropout, self.max_epochs, self.patience)

    def fit(self, X, y, networks, val_idx=None):
        X, y, train, val = self._prepare(X, y, val_idx)
        nets = check_networks(networks, X.shape[0])
        bundle = DatasetBundle(X, y, nets, Splits(train, val, np.empty(0, np.int64)))
        run = train_attention_model(bundle, self._hp(), _base_seed(self.random_state), len(self.classes_))
        self.attention_ = run.attention
        self.best_val_score_ = run.val_macro_f1
        self.logits_ = run.logits
        self.embedding_ = run.embedding
        return self


class GRAFClassifier(_Transductive):
    """Attention-weighted network fusion followed by a GCN on the fused graph.

    ``variant`` picks the arc scoring (``"full"``, ``"node_only"``,
    ``"assoc_only"``); ``eliminate`` toggles probabilistic edge elimination.
    Attention hyperparameters default to the GCN's hidden size and learning rate.
    """

    def __init__(self, variant="full", eliminate=False, attention_repeats=10, hidden_size=64,
                 learning_rate=0.01, dropout=0.5, max_epochs=1000, patience=30, min_epochs=200,
                 heads=8, semantic_dim=128, attention_hidden_size=None, attention_learning_rate=None,
                 attention_dropout=0.5, attention_max_epochs=200, random_state=None):
        self.variant = variant
        self.eliminate = eliminate
        self.attention_repeats = attention_repeats
        self.hidden_size = hidden_size
        self.learning_rate = learning_rate
        self.dropout = dropout
        self.max_epochs = max_epochs
        self.patience = patience
        self.min_epochs = min_epochs
        self.heads = heads
        self.semantic_dim = semantic_dim
        self.attention_hidden_size = attention_hidden_size
        self.attention_learning_rate = attention_learning_rate
        self.attention_dropout = attention_dropout
        self.attention_max_epochs = attention_max_epochs
        self.random_state = random_state

    def _attention_hp(self) -> AttentionHyperparams:
        return AttentionHyperparams(
            hidden_size=self.attention_hidden_size or self.hidden_size,
            learning_rate=self.attention_learning_rate or self.learning_rate,
            heads=self.heads,
            semantic_dim=self.semantic_dim,
            dropout=self.attention_dropout,
            max_epochs=self.attention_max_epochs,
            patience=self.patience,
        )

    def fit(self, X, y, networks, val_idx=None, attention: AttentionBundle | None = None):
        X, y, train, val = self._prepare(X, y, val_idx)
        nets = check_networks(networks, X.shape[0])
        seed = _base_seed(self.random_state)
        if attention is None:
            bundle = DatasetBundle(X, y, nets, Splits(train, val, np.empty(0, np.int64)))
            seeds = seeding.stage_seeds(seed, seeding.ATTENTION, self.attention_repeats)
            attention = extract_averaged_attention(bundle, self._attention_hp(), self.attention_repeats,
                                                   seeds, len(self.classes_))
        graph = fuse(attention, nets, self.variant)
        if self.eliminate:
            graph = eliminate_edges(graph, seeding.stage_seed(seed, seeding.ELIMINATION))
        hp = GcnHyperparams(self.hidden_size, self.learning_rate, self.dropout,
                            self.max_epochs, self.patience, self.min_epochs)
        run = train_gcn(graph.edges, graph.scores, X, y, train, val, len(self.classes_), hp,
                        seeding.stage_seed(seed, seeding.GCN))
        self.attention_ = attention
        self.fused_graph_ = graph
        self.model_ = run.model
        self.best_val_score_ = run.val_macro_f1
        self.logits_ = run.logits
        self.embedding_ = run.embeddings
        return self
