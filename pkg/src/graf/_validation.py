"""Input checks shared by the estimators."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from sklearn.utils.validation import check_array

from .autodiff import EdgeList
from .fusion import FusedGraph
from .graph import AssociationNetwork


def check_features(X) -> np.ndarray:
    return check_array(X, dtype=np.float64, accept_sparse=False)


def check_node_labels(y, n: int) -> np.ndarray:
    """Labels per node with -1 marking nodes whose label must not be used."""
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n:
        raise ValueError(f"y must hold one label per node ({n}), got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValueError("labels must be integer class ids")
        y = y.astype(np.int64)
    if y.min() < -1:
        raise ValueError("labels must be class ids >= 0, or -1 for unlabelled nodes")
    if y.max() < 0:
        raise ValueError("no labelled nodes")
    return y.astype(np.int64)


def check_index(idx, n: int, name: str) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ValueError(f"{name} contains node ids outside [0, {n})")
    if np.unique(idx).size != idx.size:
        raise ValueError(f"{name} repeats node ids")
    return idx


def training_split(y: np.ndarray, val_idx) -> tuple[np.ndarray, np.ndarray]:
    """Train nodes are the labelled nodes outside ``val_idx``."""
    n = y.shape[0]
    val = check_index(val_idx, n, "val_idx") if val_idx is not None else np.empty(0, np.int64)
    if val.size and np.any(y[val] < 0):
        raise ValueError("every validation node needs a label")
    labelled = np.flatnonzero(y >= 0)
    train = np.setdiff1d(labelled, val)
    if train.size == 0:
        raise ValueError("no labelled training nodes remain after removing validation nodes")
    return train, val


def check_networks(networks, n: int) -> list[AssociationNetwork]:
    if isinstance(networks, AssociationNetwork):
        networks = [networks]
    networks = list(networks)
    if not networks:
        raise ValueError("at least one association network is required")
    names = set()
    for net in networks:
        if not isinstance(net, AssociationNetwork):
            raise TypeError(f"expected AssociationNetwork, got {type(net).__name__}")
        if net.n != n:
            raise ValueError(f"network {net.name!r} has {net.n} nodes, features have {n}")
        if net.name in names:
            raise ValueError(f"duplicate network name {net.name!r}")
        names.add(net.name)
    return networks


def check_adjacency(adjacency, n: int) -> tuple[EdgeList, np.ndarray]:
    """Accept a FusedGraph, an AssociationNetwork (unit weights) or a square sparse/dense matrix."""
    if isinstance(adjacency, FusedGraph):
        edges, w = adjacency.edges, adjacency.scores
    elif isinstance(adjacency, AssociationNetwork):
        edges, w = adjacency.edges, np.ones(adjacency.num_arcs)
    else:
        m = sp.coo_matrix(adjacency)
        if m.shape[0] != m.shape[1]:
            raise ValueError("adjacency must be square")
        m.sum_duplicates()
        m.eliminate_zeros()
        edges = EdgeList(m.row, m.col, m.shape[0])
        w = m.data[np.lexsort((m.col, m.row))].astype(np.float64)
    if edges.n != n:
        raise ValueError(f"adjacency covers {edges.n} nodes, features have {n}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("adjacency weights must be finite and non-negative")
    return edges, np.asarray(w, dtype=np.float64)
