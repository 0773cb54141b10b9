"""Fuse attention-weighted association networks into one directed weighted graph."""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .attention import AttentionBundle
from .autodiff import EdgeList
from .graph import AssociationNetwork

VARIANTS = ("full", "node_only", "assoc_only")


class FusionError(ValueError):
    pass


@dataclass
class FusedGraph:
    edges: EdgeList
    scores: np.ndarray
    variant: str = "full"
    eliminated: bool = False
    seed: int | None = None
    max_score: float | None = None

    @property
    def n(self) -> int:
        return self.edges.n

    def to_dense(self) -> np.ndarray:
        return self.edges.matrix(self.scores).toarray()

    def as_dict(self) -> dict[tuple[int, int], float]:
        return {(int(i), int(j)): float(s) for i, j, s in zip(self.edges.rows, self.edges.cols, self.scores)}

    def save(self, edges_path, meta_path=None) -> None:
        edges_path = Path(edges_path)
        with open(edges_path, "w", encoding="utf-8") as fh:
            for i, j, s in zip(self.edges.rows, self.edges.cols, self.scores):
                fh.write(f"{i}\t{j}\t{s:.9g}\n")
        meta_path = Path(meta_path) if meta_path else edges_path.with_name("fused_meta.json")
        meta = {
            "variant": self.variant,
            "eliminated": self.eliminated,
            "seed": self.seed,
            "max_score": float(self.scores.max()) if self.max_score is None else self.max_score,
            "n": self.n,
            "arcs": int(self.scores.size),
        }
        meta_path.write_text(json.dumps(meta, indent=2), encoding="utf-8")

    @classmethod
    def load(cls, edges_path, meta_path=None) -> "FusedGraph":
        edges_path = Path(edges_path)
        meta_path = Path(meta_path) if meta_path else edges_path.with_name("fused_meta.json")
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        data = np.loadtxt(edges_path, delimiter="\t", ndmin=2)
        el = EdgeList(data[:, 0].astype(np.int64), data[:, 1].astype(np.int64), int(meta["n"]))
        order = np.lexsort((data[:, 1], data[:, 0]))
        return cls(el, data[order, 2], meta["variant"], meta["eliminated"], meta["seed"], meta["max_score"])


def _contributions(bundle: AttentionBundle, nets: Sequence[AssociationNetwork]):
    if not nets:
        raise FusionError("no association networks to fuse")
    n = nets[0].n
    for net in nets:
        if net.n != n:
            raise FusionError("association networks disagree on node count")
        if net.name not in bundle.alpha or net.name not in bundle.beta:
            raise FusionError(f"attention bundle has no entry for {net.name!r}")
        known = bundle.edges[net.name]
        if not (np.array_equal(known.rows, net.edges.rows) and np.array_equal(known.cols, net.edges.cols)):
            raise FusionError(f"attention for {net.name!r} does not cover the network's arcs")
    return n


def _merge(n: int, nets, per_net_values) -> tuple[EdgeList, np.ndarray, np.ndarray]:
    """Sum per-arc values over networks; also return how many networks hold each arc."""
    keys = np.concatenate([net.edges.rows * n + net.edges.cols for net in nets])
    vals = np.concatenate(per_net_values)
    uniq, inv = np.unique(keys, return_inverse=True)
    summed = np.zeros(uniq.size)
    # ordered accumulation keeps single-network values bit-exact
    np.add.at(summed, inv, vals)
    counts = np.bincount(inv, minlength=uniq.size)
    return EdgeList(uniq // n, uniq % n, n), summed, counts


def score_full(bundle: AttentionBundle, nets: Sequence[AssociationNetwork]) -> FusedGraph:
    """score(i, j) = sum of beta * alpha_ij over the networks containing (i, j)."""
    n = _contributions(bundle, nets)
    edges, scores, _ = _merge(n, nets, [bundle.beta[net.name] * bundle.alpha[net.name] for net in nets])
    return FusedGraph(edges, scores, "full")


def score_node_only(bundle: AttentionBundle, nets: Sequence[AssociationNetwork]) -> FusedGraph:
    """score(i, j) = sum of alpha_ij over the networks containing (i, j)."""
    n = _contributions(bundle, nets)
    edges, scores, _ = _merge(n, nets, [bundle.alpha[net.name] for net in nets])
    return FusedGraph(edges, scores, "node_only")


def score_assoc_only(bundle: AttentionBundle, nets: Sequence[AssociationNetwork]) -> FusedGraph:
    """score(i, j) = mean beta over the networks containing (i, j)."""
    n = _contributions(bundle, nets)
    edges, summed, counts = _merge(n, nets, [np.full(net.num_arcs, bundle.beta[net.name]) for net in nets])
    return FusedGraph(edges, summed / counts, "assoc_only")


SCORERS = {"full": score_full, "node_only": score_node_only, "assoc_only": score_assoc_only}


def fuse(bundle: AttentionBundle, nets: Sequence[AssociationNetwork], variant: str = "full") -> FusedGraph:
    if variant not in SCORERS:
        raise FusionError(f"unknown fusion variant {variant!r}; expected one of {VARIANTS}")
    return SCORERS[variant](bundle, nets)


def eliminate_edges(g: FusedGraph, seed: int) -> FusedGraph:
    """Keep each non-loop arc with probability score / max score; self-loops always stay."""
    if g.eliminated:
        raise FusionError("graph has already been through edge elimination")
    top = float(g.scores.max())
    keep_prob = g.scores / top
    rng = np.random.default_rng(seed)
    keep = (rng.random(g.scores.size) < keep_prob) | (g.edges.rows == g.edges.cols)
    edges = EdgeList(g.edges.rows[keep], g.edges.cols[keep], g.n)
    return replace(g, edges=edges, scores=g.scores[keep], eliminated=True, seed=seed, max_score=top)


def weighted_network(net: AssociationNetwork, weights: np.ndarray) -> FusedGraph:
    """A single network carrying per-arc weights, in fused-graph form."""
    return FusedGraph(net.edges, np.asarray(weights, dtype=np.float64), "single")
