"""Hierarchical node- and association-level attention model.

Each association network gets its own multi-head node attention on top of a
shared feature projection; association embeddings are then mixed by a
softmax-normalised association weight and fed to a linear classifier.  After
training, the per-arc attention (averaged over heads) and the association
weights are read out and averaged over repeated runs.
"""
from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import EdgeList, Tensor
from .graph import AssociationNetwork, DatasetBundle
from .metrics import macro_f1
from .training import TrainingError, TrainingLog, fit_early_stopping


class AttentionConfigError(ValueError):
    pass


@dataclass
class AttentionHyperparams:
    hidden_size: int = 64
    learning_rate: float = 0.005
    heads: int = 8
    semantic_dim: int = 128
    dropout: float = 0.5
    max_epochs: int = 200
    patience: int = 30
    min_epochs: int = 0
    slope: float = 0.2

    @property
    def head_dim(self) -> int:
        return max(1, self.hidden_size // self.heads)


def _assoc_seed(seed: int, name: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, 1, zlib.crc32(name.encode())])


@dataclass
class ForwardResult:
    logits: Tensor
    embedding: Tensor
    alpha: list[np.ndarray]  # per association: (heads, arcs)
    beta: np.ndarray
    scores: np.ndarray


def association_softmax(scores) -> Tensor:
    """Normalise per-association scores into weights summing to one."""
    scores = ad.ravel(scores)
    return ad.segment_softmax(scores, np.zeros(scores.shape[0], dtype=np.int64))


class HierarchicalAttention:
    """Parameters and forward pass of the two-level attention model."""

    def __init__(self, n_features: int, n_classes: int, association_names: Sequence[str],
                 hp: AttentionHyperparams, seed: int):
        if not association_names:
            raise AttentionConfigError("at least one association network is required")
        self.hp = hp
        self.names = list(association_names)
        d, width = hp.head_dim, hp.head_dim * hp.heads
        shared = np.random.default_rng(np.random.SeedSequence([seed, 0]))
        self.projection = ad.glorot_uniform((n_features, d), shared, "projection")
        self.semantic_w = ad.glorot_uniform((width, hp.semantic_dim), shared, "semantic_w")
        self.semantic_q = ad.glorot_uniform((hp.semantic_dim, 1), shared, "semantic_q")
        self.classifier = ad.glorot_uniform((width, n_classes), shared, "classifier")
        self.attention = {}
        for name in self.names:
            rng = np.random.default_rng(_assoc_seed(seed, name))
            # column 0 scores the aggregating node, column 1 the neighbour
            self.attention[name] = [ad.glorot_uniform((d, 2), rng, f"a[{name},{k}]") for k in range(hp.heads)]
        self.dropout_rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))

    @property
    def parameters(self) -> list[Tensor]:
        out = [self.projection, self.semantic_w, self.semantic_q, self.classifier]
        for name in self.names:
            out.extend(self.attention[name])
        return out

    def node_attention(self, h: Tensor, edges: EdgeList, a: Tensor) -> tuple[Tensor, Tensor]:
        s = ad.matmul(h, a)
        e = ad.add(ad.gather(ad.ravel(ad.columns(s, 0, 1)), edges.rows),
                   ad.gather(ad.ravel(ad.columns(s, 1, 2)), edges.cols))
        alpha = ad.segment_softmax(ad.leaky_relu(e, self.hp.slope), edges.rows)
        return alpha, ad.elu(ad.sparse_aggregate(edges, alpha, h))

    def association_attention(self, zs: Sequence[Tensor]) -> tuple[Tensor, Tensor, Tensor]:
        if not zs:
            raise AttentionConfigError("no association embeddings to combine")
        f = ad.concat_last_axis([
            ad.ravel(ad.mean(ad.matmul(ad.tanh(ad.matmul(z, self.semantic_w)), self.semantic_q)))
            for z in zs
        ])
        beta = association_softmax(f)
        mixed = ad.mul(zs[0], ad.gather(beta, [0]))
        for k in range(1, len(zs)):
            mixed = ad.add(mixed, ad.mul(zs[k], ad.gather(beta, [k])))
        return f, beta, ad.elu(mixed)

    def forward(self, x, networks: Sequence[AssociationNetwork], training: bool = False) -> ForwardResult:
        x = ad.dropout(x, self.hp.dropout, training, self.dropout_rng)
        h = ad.matmul(x, self.projection)
        zs, alphas = [], []
        for net in networks:
            heads, head_alpha = [], []
            for a in self.attention[net.name]:
                alpha, z = self.node_attention(h, net.edges, a)
                heads.append(z)
                head_alpha.append(alpha.values)
            zs.append(ad.concat_last_axis(heads))
            alphas.append(np.vstack(head_alpha))
        f, beta, embedding = self.association_attention(zs)
        logits = ad.matmul(embedding, self.classifier)
        return ForwardResult(logits, embedding, alphas, beta.values.copy(), f.values.copy())


@dataclass
class AttentionBundle:
    """Per-arc node attention and per-association weights, keyed by association name."""

    alpha: dict[str, np.ndarray]
    beta: dict[str, float]
    edges: dict[str, EdgeList]
    repeats: int = 1

    @classmethod
    def average(cls, bundles: Sequence["AttentionBundle"]) -> "AttentionBundle":
        if not bundles:
            raise AttentionConfigError("nothing to average")
        first = bundles[0]
        c = len(bundles)
        alpha = {k: sum(b.alpha[k] for b in bundles) / c for k in first.alpha}
        beta = {k: sum(b.beta[k] for b in bundles) / c for k in first.beta}
        return cls(alpha, beta, dict(first.edges), sum(b.repeats for b in bundles))

    def to_json(self) -> dict:
        return {
            "beta": {k: float(v) for k, v in self.beta.items()},
            "alpha": {
                k: [[int(i), int(j), float(v)] for i, j, v in zip(self.edges[k].rows, self.edges[k].cols, self.alpha[k])]
                for k in self.alpha
            },
            "repeats": self.repeats,
            "n": {k: int(e.n) for k, e in self.edges.items()},
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_json()), encoding="utf-8")
        return path

    @classmethod
    def from_json(cls, data: dict, n: int | None = None) -> "AttentionBundle":
        alpha, edges = {}, {}
        sizes = data.get("n", {})
        for name, triples in data["alpha"].items():
            arr = np.asarray(triples, dtype=np.float64).reshape(-1, 3)
            rows, cols = arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64)
            size = n or sizes.get(name) or int(max(rows.max(), cols.max())) + 1
            el = EdgeList(rows, cols, size)
            order = np.lexsort((cols, rows))
            alpha[name] = arr[order, 2]
            edges[name] = el
        return cls(alpha, {k: float(v) for k, v in data["beta"].items()}, edges, int(data.get("repeats", 1)))

    @classmethod
    def load(cls, path, n: int | None = None) -> "AttentionBundle":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")), n)


@dataclass
class AttentionRun:
    model: HierarchicalAttention
    attention: AttentionBundle
    val_macro_f1: float
    log: TrainingLog
    embedding: np.ndarray = field(repr=False)
    logits: np.ndarray = field(repr=False)


def _labelled(bundle: DatasetBundle):
    if bundle.splits is None:
        raise AttentionConfigError("dataset has no splits")
    train, val = bundle.splits.train, bundle.splits.val
    if train.size == 0 or val.size == 0:
        raise AttentionConfigError("train and validation splits must be non-empty")
    return train, val


def train_attention_model(bundle: DatasetBundle, hp: AttentionHyperparams, seed: int,
                          n_classes: int | None = None) -> AttentionRun:
    """Train on the train split, keep the best validation epoch, read out attention there."""
    train, val = _labelled(bundle)
    labels = bundle.labels
    c = n_classes or int(labels[np.concatenate([train, val])].max()) + 1
    nets = bundle.associations
    model = HierarchicalAttention(bundle.features.shape[1], c, [a.name for a in nets], hp, seed)
    x = Tensor(bundle.features)

    def loss_fn():
        return ad.cross_entropy(model.forward(x, nets, training=True).logits, labels, train)

    def score_fn():
        logits = model.forward(x, nets).logits
        f1 = macro_f1(labels[val], logits.values[val].argmax(axis=1), c)
        return f1, float(ad.cross_entropy(logits, labels, val).values)

    log = fit_early_stopping(model.parameters, loss_fn, score_fn, hp.learning_rate,
                             hp.max_epochs, hp.patience, hp.min_epochs)
    out = model.forward(x, nets)
    att = AttentionBundle(
        alpha={net.name: a.mean(axis=0) for net, a in zip(nets, out.alpha)},
        beta={net.name: float(b) for net, b in zip(nets, out.beta)},
        edges={net.name: net.edges for net in nets},
    )
    return AttentionRun(model, att, log.best_score, log, out.embedding.values, out.logits.values)


def extract_averaged_attention(bundle: DatasetBundle, hp: AttentionHyperparams, repeats: int,
                               seeds: Sequence[int], n_classes: int | None = None) -> AttentionBundle:
    """Average attention over ``repeats`` independently seeded training runs."""
    if repeats < 1:
        raise AttentionConfigError("repeat count must be at least 1")
    if len(seeds) < repeats:
        raise AttentionConfigError(f"need {repeats} seeds, got {len(seeds)}")
    runs = []
    for c in range(repeats):
        try:
            runs.append(train_attention_model(bundle, hp, int(seeds[c]), n_classes).attention)
        except (TrainingError, ValueError) as exc:
            raise TrainingError(f"attention repeat {c} failed: {exc}") from exc
    return AttentionBundle.average(runs)


def han_predict(bundle: DatasetBundle, hp: AttentionHyperparams, seed: int,
                n_classes: int | None = None) -> tuple[np.ndarray, AttentionRun]:
    """Predict the test nodes straight from the attention model, without fusion."""
    run = train_attention_model(bundle, hp, seed, n_classes)
    return run.logits[bundle.splits.test].argmax(axis=1), run
