"""Two-layer graph convolutional classifier on a weighted (possibly directed) graph."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import EdgeList, Tensor
from .metrics import macro_f1
from .training import TrainingLog, fit_early_stopping


class NormalizationError(ValueError):
    pass


@dataclass
class GcnHyperparams:
    hidden_size: int = 64
    learning_rate: float = 0.01
    dropout: float = 0.5
    max_epochs: int = 1000
    patience: int = 30
    min_epochs: int = 200


def normalize_adjacency(edges: EdgeList, weights) -> np.ndarray:
    """Arc weights of D^-1/2 A D^-1/2 with D the row sums of A (no self-loops added)."""
    w = np.asarray(weights, dtype=np.float64)
    deg = np.bincount(edges.rows, weights=w, minlength=edges.n)
    bad = np.flatnonzero(deg <= 0)
    if bad.size:
        raise NormalizationError(f"node {int(bad[0])} has non-positive weighted degree")
    inv = 1.0 / np.sqrt(deg)
    return w * inv[edges.rows] * inv[edges.cols]


class GcnModel:
    def __init__(self, edges: EdgeList, weights, n_features: int, n_classes: int,
                 hp: GcnHyperparams, seed: int):
        self.edges = edges
        self.norm = normalize_adjacency(edges, weights)
        self.hp = hp
        init = np.random.default_rng(np.random.SeedSequence([seed, 0]))
        self.w1 = ad.glorot_uniform((n_features, hp.hidden_size), init, "W1")
        self.w2 = ad.glorot_uniform((hp.hidden_size, n_classes), init, "W2")
        self.dropout_rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))

    @property
    def parameters(self) -> list[Tensor]:
        return [self.w1, self.w2]

    def hidden(self, x, training: bool = False) -> Tensor:
        x = ad.dropout(x, self.hp.dropout, training, self.dropout_rng)
        return ad.relu(ad.sparse_aggregate(self.edges, self.norm, ad.matmul(x, self.w1)))

    def forward(self, x, training: bool = False) -> Tensor:
        if x.shape[0] != self.edges.n or x.shape[1] != self.w1.shape[0]:
            raise ValueError(f"features of shape {x.shape} do not fit the model")
        return ad.sparse_aggregate(self.edges, self.norm, ad.matmul(self.hidden(x, training), self.w2))

    def embeddings(self, x) -> np.ndarray:
        return self.hidden(x, training=False).values


def gcn_forward(model: GcnModel, x, training: bool = False) -> Tensor:
    return model.forward(x if isinstance(x, Tensor) else Tensor(x), training)


def export_embeddings(model: GcnModel, x) -> np.ndarray:
    return model.embeddings(x if isinstance(x, Tensor) else Tensor(x))


@dataclass
class GcnRun:
    model: GcnModel
    val_macro_f1: float
    log: TrainingLog
    logits: np.ndarray = field(repr=False)
    embeddings: np.ndarray = field(repr=False)

    @property
    def predictions(self) -> np.ndarray:
        return self.logits.argmax(axis=1)


def train_gcn(edges: EdgeList, weights, features, labels, train, val, n_classes: int,
              hp: GcnHyperparams, seed: int) -> GcnRun:
    """Fit on ``train`` with early stopping on validation macro F1.

    ``labels`` only needs to be valid on the train and validation nodes.
    """
    train, val = np.asarray(train), np.asarray(val)
    if train.size == 0 or val.size == 0:
        raise ValueError("train and validation splits must be non-empty")
    x = Tensor(features)
    model = GcnModel(edges, weights, x.shape[1], n_classes, hp, seed)

    def loss_fn():
        return ad.cross_entropy(model.forward(x, training=True), labels, train)

    def score_fn():
        logits = model.forward(x)
        f1 = macro_f1(labels[val], logits.values[val].argmax(axis=1), n_classes)
        return f1, float(ad.cross_entropy(logits, labels, val).values)

    log = fit_early_stopping(model.parameters, loss_fn, score_fn, hp.learning_rate,
                             hp.max_epochs, hp.patience, hp.min_epochs)
    return GcnRun(model, log.best_score, log, model.forward(x).values, model.embeddings(x))
