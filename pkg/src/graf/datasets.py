"""Synthetic heterogeneous datasets with a planted label signal."""
from __future__ import annotations

import numpy as np

from .graph import DatasetBundle, Splits, TypedGraph, compose_meta_path, generate_splits, write_dataset


def make_planted(n: int = 120, n_classes: int = 3, n_features: int = 20, n_informative: int = 3,
                 n_pure: int = 12, n_noisy: int = 6, feature_noise: float = 1.0, purity: float = 0.9,
                 seed: int = 0) -> dict:
    """Anchor type ``P`` linked to a label-aligned type ``A`` and a random type ``S``.

    Each ``A`` node belongs to one class and links mostly to papers of that
    class (with probability ``purity``); ``S`` nodes link to papers at random.
    Features carry a weak class signal in the first ``n_informative`` columns.
    Returns the pieces accepted by :func:`graf.graph.write_dataset`.
    """
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % n_classes
    rng.shuffle(labels)
    features = rng.normal(0.0, feature_noise, size=(n, n_features))
    features[np.arange(n), labels % n_informative] += 1.0

    pa_src, pa_dst = [], []
    for a in range(n_pure):
        cls = a % n_classes
        same = np.flatnonzero(labels == cls)
        other = np.flatnonzero(labels != cls)
        for p in range(n):
            pool_hit = rng.random() < 3.0 / max(1, same.size) * purity * n_classes
            if labels[p] == cls and pool_hit:
                pa_src.append(p)
                pa_dst.append(a)
        k = max(0, int(round(len(same) * (1 - purity) * 0.3)))
        for p in rng.choice(other, size=min(k, other.size), replace=False):
            pa_src.append(int(p))
            pa_dst.append(a)
    ps_src = np.arange(n)
    ps_dst = rng.integers(n_noisy, size=n)
    relations = {"PA": (np.array(pa_src, dtype=np.int64), np.array(pa_dst, dtype=np.int64)),
                 "PS": (ps_src, ps_dst)}
    return {"features": features, "labels": labels, "relations": relations,
            "meta_paths": [["P", "A", "P"], ["P", "S", "P"]],
            "node_counts": {"P": n, "A": n_pure, "S": n_noisy}}


def planted_bundle(train_fraction: float = 0.4, split_seed: int = 0, **kwargs) -> DatasetBundle:
    parts = make_planted(**kwargs)
    g = TypedGraph(parts["node_counts"])
    for rel, (s, t) in parts["relations"].items():
        g.add_relation(rel[0], rel[1], s, t)
    nets = [compose_meta_path(g, p) for p in parts["meta_paths"]]
    splits = generate_splits(parts["labels"], train_fraction, split_seed)
    return DatasetBundle(parts["features"], parts["labels"], nets, splits, name="planted")


def write_planted(directory, train_fraction: float = 0.4, split_seed: int = 0, **kwargs):
    """Write a planted dataset directory including split files."""
    parts = make_planted(**kwargs)
    splits = generate_splits(parts["labels"], train_fraction, split_seed)
    return write_dataset(directory, parts["features"], parts["labels"], parts["relations"],
                         parts["meta_paths"], splits)
