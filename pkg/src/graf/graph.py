"""Typed graphs, meta-path composition, dataset loading and split generation."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .autodiff import EdgeList

logger = logging.getLogger(__name__)


class GraphError(ValueError):
    """Base class for dataset and composition problems."""


class CompositionError(GraphError):
    pass


class MissingFileError(GraphError):
    pass


class RaggedFeaturesError(GraphError):
    pass


class LabelRangeError(GraphError):
    pass


class EdgeRangeError(GraphError):
    pass


class SplitError(GraphError):
    pass


@dataclass
class TypedGraph:
    """Node counts per type and incidence lists per ordered type pair."""

    node_counts: dict[str, int]
    typed_edges: dict[tuple[str, str], tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def add_relation(self, src_type: str, dst_type: str, src, dst) -> None:
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        for t, ids in ((src_type, src), (dst_type, dst)):
            if t not in self.node_counts:
                raise CompositionError(f"unknown node type {t!r}")
            if ids.size and (ids.min() < 0 or ids.max() >= self.node_counts[t]):
                raise EdgeRangeError(f"{src_type}{dst_type}: endpoint out of range for type {t!r}")
        if (src_type, dst_type) in self.typed_edges:
            raise CompositionError(f"relation {src_type}-{dst_type} given twice")
        if src.size:
            pairs = np.unique(np.stack([src, dst], axis=1), axis=0)
            src, dst = pairs[:, 0], pairs[:, 1]
        self.typed_edges[(src_type, dst_type)] = (src, dst)

    def incidence(self, src_type: str, dst_type: str) -> sp.csr_matrix:
        shape = (self.node_counts[src_type], self.node_counts[dst_type])
        if (src_type, dst_type) in self.typed_edges:
            s, d = self.typed_edges[(src_type, dst_type)]
        elif (dst_type, src_type) in self.typed_edges:
            d, s = self.typed_edges[(dst_type, src_type)]
        else:
            raise CompositionError(f"no relation between {src_type!r} and {dst_type!r}")
        m = sp.csr_matrix((np.ones(s.size, dtype=bool), (s, d)), shape=shape)
        m.sum_duplicates()
        return m


@dataclass
class AssociationNetwork:
    """Binary, symmetric, self-looped network over the anchor nodes."""

    name: str
    edges: EdgeList

    @property
    def n(self) -> int:
        return self.edges.n

    @property
    def num_arcs(self) -> int:
        return self.edges.num_edges

    @property
    def num_pairs(self) -> int:
        """Undirected pairs, self-loops included."""
        loops = int(np.sum(self.edges.rows == self.edges.cols))
        return (self.num_arcs - loops) // 2 + loops

    def neighbors(self, i: int) -> np.ndarray:
        ptr = self.edges.indptr
        return self.edges.cols[ptr[i]:ptr[i + 1]]

    @classmethod
    def from_pairs(cls, name: str, n: int, src, dst) -> "AssociationNetwork":
        """Symmetrize, deduplicate and add every self-loop."""
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        rows = np.concatenate([src, dst, np.arange(n)])
        cols = np.concatenate([dst, src, np.arange(n)])
        m = sp.csr_matrix((np.ones(rows.size, dtype=bool), (rows, cols)), shape=(n, n))
        return cls._from_bool(name, m)

    @classmethod
    def _from_bool(cls, name: str, m: sp.spmatrix) -> "AssociationNetwork":
        m = sp.csr_matrix(m, dtype=bool)
        n = m.shape[0]
        m = m + m.T + sp.identity(n, dtype=bool, format="csr")
        coo = sp.csr_matrix(m, dtype=bool).tocoo()
        return cls(name, EdgeList(coo.row, coo.col, n))

    def to_dense(self) -> np.ndarray:
        return self.edges.matrix(np.ones(self.num_arcs)).toarray()


def path_name(path) -> str:
    return "".join(path) if all(len(t) == 1 for t in path) else "-".join(path)


def compose_meta_path(g: TypedGraph, path, anchor: str | None = None) -> AssociationNetwork:
    """Connect anchor nodes joined by at least one walk following ``path``."""
    path = list(path)
    anchor = path[0] if anchor is None else anchor
    if len(path) < 2 or path[0] != anchor or path[-1] != anchor:
        raise CompositionError(f"meta-path {path} must start and end at {anchor!r}")
    reach = g.incidence(path[0], path[1])
    for a, b in zip(path[1:-1], path[2:]):
        reach = sp.csr_matrix(reach @ g.incidence(a, b), dtype=bool)
    return AssociationNetwork._from_bool(path_name(path), reach)


@dataclass
class Splits:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        for name in ("train", "val", "test"):
            setattr(self, name, np.sort(np.asarray(getattr(self, name), dtype=np.int64)))

    def check(self, n: int) -> None:
        parts = [self.train, self.val, self.test]
        joined = np.concatenate(parts)
        if joined.size and (joined.min() < 0 or joined.max() >= n):
            raise SplitError("split node id out of range")
        if np.unique(joined).size != joined.size:
            raise SplitError("splits overlap or repeat node ids")

    def as_dict(self) -> dict:
        return {"train": self.train, "val": self.val, "test": self.test}


@dataclass
class DatasetBundle:
    features: np.ndarray
    labels: np.ndarray
    associations: list[AssociationNetwork]
    splits: Splits | None = None
    name: str = "dataset"

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1

    def with_labels(self, labels: np.ndarray) -> "DatasetBundle":
        return DatasetBundle(self.features, labels, self.associations, self.splits, self.name)

    def with_splits(self, splits: Splits) -> "DatasetBundle":
        return DatasetBundle(self.features, self.labels, self.associations, splits, self.name)

    def summary(self) -> dict:
        return {
            "name": self.name,
            "n": self.n,
            "features": int(self.features.shape[1]),
            "classes": self.n_classes,
            "associations": {
                a.name: {"arcs": a.num_arcs, "pairs": a.num_pairs} for a in self.associations
            },
        }


def _read_id_pairs(path: Path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, dtype=np.int64, delimiter="\t", ndmin=2)
    if data.size == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    return data[:, 0], data[:, 1]


def _relation_types(stem: str) -> tuple[str, str]:
    rel = stem[len("edges_"):]
    for sep in ("-", "_"):
        if sep in rel:
            a, b = rel.split(sep, 1)
            return a, b
    if len(rel) == 2:
        return rel[0], rel[1]
    raise CompositionError(f"cannot read node types from relation name {rel!r}")


def _read_features(path: Path) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for k, line in enumerate(fh):
            line = line.strip()
            if line:
                rows.append(line.split(","))
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        raise RaggedFeaturesError(f"{path}: rows have differing widths {sorted(widths)}")
    return np.array(rows, dtype=np.float64)


def load_dataset(directory) -> DatasetBundle:
    """Read a dataset directory (features.csv, labels.tsv, edges_*.tsv, meta_paths.json)."""
    d = Path(directory)
    for fname in ("features.csv", "labels.tsv", "meta_paths.json"):
        if not (d / fname).is_file():
            raise MissingFileError(f"{d / fname} not found")
    features = _read_features(d / "features.csv")
    n = features.shape[0]

    ids, cls = _read_id_pairs(d / "labels.tsv")
    if ids.size != n or np.unique(ids).size != n or ids.min() < 0 or ids.max() >= n:
        raise LabelRangeError(f"labels.tsv must list each of the {n} nodes exactly once")
    labels = np.empty(n, dtype=np.int64)
    labels[ids] = cls
    if labels.min() < 0:
        raise LabelRangeError("negative class id in labels.tsv")
    if np.unique(labels).size != labels.max() + 1:
        raise LabelRangeError("class ids must be contiguous from 0")

    meta_paths = json.loads((d / "meta_paths.json").read_text(encoding="utf-8"))
    if not meta_paths:
        raise CompositionError("meta_paths.json lists no meta-paths")
    anchor = meta_paths[0][0]

    relations = {}
    for path in sorted(d.glob("edges_*.tsv")):
        relations[_relation_types(path.stem)] = _read_id_pairs(path)
    counts = {anchor: n}
    for (a, b), (s, t) in relations.items():
        for typ, ids_ in ((a, s), (b, t)):
            if typ == anchor:
                if ids_.size and (ids_.min() < 0 or ids_.max() >= n):
                    raise EdgeRangeError(f"edges_{a}{b}: {typ} id out of range (n={n})")
            elif ids_.size:
                if ids_.min() < 0:
                    raise EdgeRangeError(f"edges_{a}{b}: negative {typ} id")
                counts[typ] = max(counts.get(typ, 0), int(ids_.max()) + 1)
            else:
                counts.setdefault(typ, 0)
    g = TypedGraph(counts)
    for (a, b), (s, t) in relations.items():
        g.add_relation(a, b, s, t)
    associations = [compose_meta_path(g, p, anchor) for p in meta_paths]

    splits = None
    if (d / "split_train.txt").is_file():
        splits = load_original_splits(d)
        splits.check(n)
    bundle = DatasetBundle(features, labels, associations, splits, name=d.name)
    logger.info("loaded %s", bundle.summary())
    return bundle


def load_original_splits(directory) -> Splits:
    d = Path(directory)
    parts = {}
    for key, fname in (("train", "split_train.txt"), ("val", "split_val.txt"), ("test", "split_test.txt")):
        if not (d / fname).is_file():
            raise MissingFileError(f"{d / fname} not found")
        parts[key] = np.loadtxt(d / fname, dtype=np.int64, ndmin=1)
    splits = Splits(**parts)
    joined = np.concatenate([splits.train, splits.val, splits.test])
    if np.unique(joined).size != joined.size:
        raise SplitError("original splits overlap")
    return splits


def _allocate(counts: np.ndarray, fraction: float, total: int) -> np.ndarray:
    """Per-class sizes summing to ``total``, each class keeping >= 1 on both sides."""
    exact = counts * fraction
    alloc = np.clip(np.floor(exact).astype(np.int64), 1, counts - 1)
    while alloc.sum() < total:
        room = np.where(alloc < counts - 1, exact - alloc, -np.inf)
        if not np.isfinite(room.max()):
            break
        alloc[np.argmax(room)] += 1
    while alloc.sum() > total:
        room = np.where(alloc > 1, alloc - exact, -np.inf)
        if not np.isfinite(room.max()):
            break
        alloc[np.argmax(room)] -= 1
    return alloc


def generate_splits(labels, train_fraction: float, seed: int, test_fraction: float = 0.2) -> Splits:
    """Stratified test / train / validation partition.

    The test part depends only on ``seed`` so that splits drawn with different
    ``train_fraction`` share the same test nodes.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if not 0.0 < train_fraction < 1.0:
        raise SplitError(f"train fraction must lie in (0, 1), got {train_fraction}")
    classes, counts = np.unique(labels, return_counts=True)
    if counts.min() < 3:
        raise SplitError(f"class {classes[np.argmin(counts)]} has fewer than 3 members")
    n = labels.size
    test_seq, train_seq = np.random.SeedSequence(seed).spawn(2)
    test_rng, train_rng = np.random.default_rng(test_seq), np.random.default_rng(train_seq)

    members = [np.flatnonzero(labels == c) for c in classes]
    perms = [test_rng.permutation(m) for m in members]
    n_test = _allocate(counts, test_fraction, int(round(test_fraction * n)))
    test = np.concatenate([p[:k] for p, k in zip(perms, n_test)])
    rest = [p[k:] for p, k in zip(perms, n_test)]
    rest_counts = np.array([r.size for r in rest])
    if rest_counts.min() < 2:
        raise SplitError("class too small to stratify into train and validation")
    n_train = _allocate(rest_counts, train_fraction, int(round(train_fraction * rest_counts.sum())))
    rest = [train_rng.permutation(r) for r in rest]
    train = np.concatenate([r[:k] for r, k in zip(rest, n_train)])
    val = np.concatenate([r[k:] for r, k in zip(rest, n_train)])
    return Splits(train, val, test)


def write_dataset(directory, features, labels, relations: dict, meta_paths, splits: Splits | None = None) -> Path:
    """Write a dataset directory in the layout read by :func:`load_dataset`.

    ``relations`` maps a relation name such as ``"PA"`` to ``(src_ids, dst_ids)``.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    np.savetxt(d / "features.csv", np.asarray(features), delimiter=",", fmt="%.17g")
    with open(d / "labels.tsv", "w", encoding="utf-8") as fh:
        for i, c in enumerate(np.asarray(labels)):
            fh.write(f"{i}\t{int(c)}\n")
    for rel, (s, t) in relations.items():
        with open(d / f"edges_{rel}.tsv", "w", encoding="utf-8") as fh:
            for a, b in zip(s, t):
                fh.write(f"{int(a)}\t{int(b)}\n")
    (d / "meta_paths.json").write_text(json.dumps([list(p) for p in meta_paths]), encoding="utf-8")
    if splits is not None:
        for key, ids in splits.as_dict().items():
            np.savetxt(d / f"split_{key}.txt", ids, fmt="%d")
    return d
