"""Experiment protocol: grid search, repeated runs, variants, baselines and reports.

Selection only ever looks at validation macro F1.  Test labels sit behind a
:class:`LabelGuard` that refuses to hand them out until every model of the
run has been trained.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import seeding
from .attention import AttentionBundle, AttentionHyperparams, extract_averaged_attention, train_attention_model
from .fusion import FusedGraph, eliminate_edges, fuse
from .gcn import GcnHyperparams, train_gcn
from .graph import AssociationNetwork, DatasetBundle, Splits, generate_splits, load_dataset
from .metrics import MetricReport, ari, classification_metrics, kmeans, nmi

logger = logging.getLogger(__name__)

FUSION_VARIANTS = {"graf": "full", "graf_att": "full", "graf_node": "node_only", "graf_asc": "assoc_only"}
METRICS = ("macro_f1", "weighted_f1", "accuracy")


class ConfigError(ValueError):
    pass


class LeakageError(RuntimeError):
    """Test labels were requested before final evaluation."""


@dataclass
class ExperimentConfig:
    dataset: str
    variant: str = "graf"
    split: Any = "original"
    attention_repeats: int = 10
    repeats: int = 10
    attention_grid_repeats: int | None = None
    hidden_sizes: list = field(default_factory=lambda: [16, 32, 64, 128])
    learning_rates: list = field(default_factory=lambda: [0.01, 0.005, 0.001])
    seed: int = 0
    elimination: str = "auto"
    out: str = "results"
    fractions: list = field(default_factory=lambda: [0.2, 0.4, 0.6, 0.8])
    heads: int = 8
    semantic_dim: int = 128
    dropout: float = 0.5
    attention_dropout: float = 0.5
    max_epochs: int = 1000
    patience: int = 30
    min_epochs: int = 200
    attention_max_epochs: int = 200
    kmeans_restarts: int = 10
    cluster_nodes: str = "all"

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "dataset" not in data:
            raise ConfigError("config needs a 'dataset' directory")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def validate(self) -> None:
        if not (self.variant in FUSION_VARIANTS or self.variant == "han"
                or self.variant == "gcn_single" or self.variant.startswith("gcn_single:")):
            raise ConfigError(f"unrecognised variant {self.variant!r}")
        if not self.hidden_sizes or not self.learning_rates:
            raise ConfigError("hyperparameter grid is empty")
        if self.repeats < 1 or self.attention_repeats < 1:
            raise ConfigError("repeat counts must be at least 1")
        if self.elimination not in ("on", "off", "auto"):
            raise ConfigError(f"elimination must be on, off or auto, not {self.elimination!r}")
        if self.split != "original":
            try:
                frac = float(self.split)
            except (TypeError, ValueError):
                raise ConfigError(f"split must be 'original' or a fraction, not {self.split!r}") from None
            if not 0.0 < frac < 1.0:
                raise ConfigError("split fraction must lie in (0, 1)")
        if self.cluster_nodes not in ("all", "test"):
            raise ConfigError("cluster_nodes must be 'all' or 'test'")

    def replace(self, **changes) -> "ExperimentConfig":
        cfg = dataclasses.replace(self, **changes)
        cfg.validate()
        return cfg

    @property
    def split_label(self) -> str:
        return "original" if self.split == "original" else f"{float(self.split):g}"


class LabelGuard:
    """Hands out train/validation labels freely and test labels only after ``release``."""

    def __init__(self, labels: np.ndarray, splits: Splits):
        self._labels = np.asarray(labels)
        self.splits = splits
        self.reads: Counter = Counter()
        self.released = False

    def visible_labels(self) -> np.ndarray:
        y = np.full(self._labels.shape, -1, dtype=np.int64)
        for name in ("train", "val"):
            idx = getattr(self.splits, name)
            y[idx] = self._labels[idx]
            self.reads[name] += 1
        return y

    def read(self, split: str) -> np.ndarray:
        if split in ("test", "all") and not self.released:
            raise LeakageError(f"{split} labels requested before final evaluation")
        self.reads[split] += 1
        if split == "all":
            return self._labels.copy()
        return self._labels[getattr(self.splits, split)]

    def release(self) -> None:
        self.released = True


@dataclass
class RepeatResult:
    seed: int
    val_macro_f1: float
    test_predictions: np.ndarray = field(repr=False)
    embeddings: np.ndarray = field(repr=False)
    report: MetricReport | None = None


@dataclass
class RunSummary:
    dataset: str
    variant: str
    split: str
    chosen: dict
    repeats: list[RepeatResult]
    median: dict = field(default_factory=dict)
    std: dict = field(default_factory=dict)
    attention: AttentionBundle | None = None
    attention_hp: dict | None = None
    fused: FusedGraph | None = None
    grid: list = field(default_factory=list)
    label_reads: dict = field(default_factory=dict)
    test_nodes: np.ndarray | None = None
    test_labels: np.ndarray | None = None
    clustering: dict | None = None
    guard: LabelGuard | None = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {
            "dataset": self.dataset,
            "variant": self.variant,
            "split": self.split,
            "chosen": self.chosen,
            "attention_hp": self.attention_hp,
            "median": self.median,
            "std": self.std,
            "grid": self.grid,
            "repeats": [
                {"seed": r.seed, "val_macro_f1": r.val_macro_f1, "test": r.report.to_dict() if r.report else None}
                for r in self.repeats
            ],
            "beta": None if self.attention is None else {k: float(v) for k, v in self.attention.beta.items()},
            "label_reads": self.label_reads,
            "clustering": self.clustering,
        }


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("GRAF_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn: Callable, tasks: Sequence) -> list:
    """Run tasks in order; in worker processes when GRAF_THREADS > 1."""
    workers = min(_threads(), len(tasks))
    if workers <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*tasks)))


def _gcn_task(edges, weights, features, labels, train, val, test, c, hp, seed):
    run = train_gcn(edges, weights, features, labels, train, val, c, hp, seed)
    return RepeatResult(seed, run.val_macro_f1, run.predictions[test], run.embeddings)


def _han_task(bundle, hp, seed, c):
    run = train_attention_model(bundle, hp, seed, c)
    return RepeatResult(seed, run.val_macro_f1, run.logits[bundle.splits.test].argmax(axis=1), run.embedding)


def _median_val(results: Sequence[RepeatResult]) -> float:
    return float(np.median([r.val_macro_f1 for r in results]))


def resolve_splits(cfg: ExperimentConfig, bundle: DatasetBundle) -> Splits:
    if cfg.split == "original":
        if bundle.splits is None:
            raise ConfigError("dataset has no original split files; use a split fraction")
        return bundle.splits
    return generate_splits(bundle.labels, float(cfg.split), seeding.stage_seed(cfg.seed, seeding.SPLIT))


def _attention_hp(cfg: ExperimentConfig, hidden: int, lr: float) -> AttentionHyperparams:
    return AttentionHyperparams(hidden_size=hidden, learning_rate=lr, heads=cfg.heads,
                                semantic_dim=cfg.semantic_dim, dropout=cfg.attention_dropout,
                                max_epochs=cfg.attention_max_epochs, patience=cfg.patience)


def _gcn_hp(cfg: ExperimentConfig, hidden: int, lr: float) -> GcnHyperparams:
    return GcnHyperparams(hidden, lr, cfg.dropout, cfg.max_epochs, cfg.patience, cfg.min_epochs)


def _tune_attention(cfg, visible, c) -> tuple[tuple, list, list[RepeatResult]]:
    reps = cfg.attention_grid_repeats or cfg.repeats
    seeds = seeding.stage_seeds(cfg.seed, seeding.HAN, reps)
    best, best_runs, grid = None, None, []
    for hidden, lr in product(cfg.hidden_sizes, cfg.learning_rates):
        hp = _attention_hp(cfg, hidden, lr)
        runs = _map(_han_task, [(visible, hp, s, c) for s in seeds])
        score = _median_val(runs)
        grid.append({"stage": "attention", "hidden_size": hidden, "learning_rate": lr, "median_val_macro_f1": score})
        if best is None or score > best[0]:
            best, best_runs = (score, hidden, lr), runs
    return best, grid, best_runs


def _fused_candidates(cfg, attention, nets, variant) -> list[tuple[str, FusedGraph]]:
    graph = fuse(attention, nets, FUSION_VARIANTS[variant])
    mode = "off" if variant == "graf_att" else cfg.elimination
    out = []
    if mode in ("off", "auto"):
        out.append(("off", graph))
    if mode in ("on", "auto"):
        out.append(("on", eliminate_edges(graph, seeding.stage_seed(cfg.seed, seeding.ELIMINATION))))
    return out


def _tune_gcn(cfg, candidates, visible, c) -> tuple[dict, list, list[RepeatResult], Any]:
    """Grid over (graph candidate, hidden size, learning rate); reuse the best cell's runs."""
    seeds = seeding.stage_seeds(cfg.seed, seeding.GCN, cfg.repeats)
    splits = visible.splits
    best, grid = None, []
    for (tag, graph), hidden, lr in product(candidates, cfg.hidden_sizes, cfg.learning_rates):
        hp = _gcn_hp(cfg, hidden, lr)
        tasks = [(graph.edges, graph.scores, visible.features, visible.labels,
                  splits.train, splits.val, splits.test, c, hp, s) for s in seeds]
        runs = _map(_gcn_task, tasks)
        score = _median_val(runs)
        grid.append({"stage": "gcn", "graph": tag, "hidden_size": hidden, "learning_rate": lr,
                     "median_val_macro_f1": score})
        if best is None or score > best[0]:
            best = (score, {"graph": tag, "hidden_size": hidden, "learning_rate": lr,
                            "median_val_macro_f1": score}, runs, graph)
    return best[1], grid, best[2], best[3]


def run_pipeline(cfg: ExperimentConfig, bundle: DatasetBundle | None = None) -> RunSummary:
    """Tune on validation, then report median and spread of test metrics over the repeats."""
    cfg.validate()
    bundle = bundle if bundle is not None else load_dataset(cfg.dataset)
    splits = resolve_splits(cfg, bundle)
    splits.check(bundle.n)
    guard = LabelGuard(bundle.labels, splits)
    visible = bundle.with_splits(splits).with_labels(guard.visible_labels())
    c = int(visible.labels.max()) + 1
    summary_kw: dict = {}

    if cfg.variant == "han":
        (score, hidden, lr), grid, runs = _tune_attention(cfg, visible, c)
        chosen = {"hidden_size": hidden, "learning_rate": lr, "median_val_macro_f1": score}
    elif cfg.variant.startswith("gcn_single"):
        wanted = cfg.variant.partition(":")[2]
        nets = [a for a in visible.associations if not wanted or a.name == wanted]
        if not nets:
            raise ConfigError(f"dataset has no association named {wanted!r}")
        candidates = [(a.name, FusedGraph(a.edges, np.ones(a.num_arcs), "single")) for a in nets]
        chosen, grid, runs, fused = _tune_gcn(cfg, candidates, visible, c)
        chosen["network"] = chosen.pop("graph")
    else:
        (att_score, att_hidden, att_lr), grid, _ = _tune_attention(cfg, visible, c)
        att_hp = _attention_hp(cfg, att_hidden, att_lr)
        seeds = seeding.stage_seeds(cfg.seed, seeding.ATTENTION, cfg.attention_repeats)
        attention = extract_averaged_attention(visible, att_hp, cfg.attention_repeats, seeds, c)
        candidates = _fused_candidates(cfg, attention, visible.associations, cfg.variant)
        chosen, gcn_grid, runs, fused = _tune_gcn(cfg, candidates, visible, c)
        chosen["elimination"] = chosen.pop("graph")
        grid = grid + gcn_grid
        summary_kw = {
            "attention": attention,
            "fused": fused,
            "attention_hp": {"hidden_size": att_hidden, "learning_rate": att_lr, "median_val_macro_f1": att_score},
        }

    guard.release()
    test_labels = guard.read("test")
    for r in runs:
        r.report = classification_metrics(test_labels, r.test_predictions, c)
    summary = RunSummary(
        dataset=bundle.name, variant=cfg.variant, split=cfg.split_label, chosen=chosen, repeats=runs,
        grid=grid, label_reads=dict(guard.reads), guard=guard, test_nodes=splits.test, test_labels=test_labels, **summary_kw,
    )
    for m in METRICS:
        values = np.array([getattr(r.report, m) for r in runs])
        summary.median[m] = float(np.median(values))
        summary.std[m] = float(np.std(values))
    logger.info("%s %s split=%s macro F1 %.4f", bundle.name, cfg.variant, cfg.split_label, summary.median["macro_f1"])
    return summary


def run_split_sweep(cfg: ExperimentConfig, fractions: Sequence[float] | None = None,
                    bundle: DatasetBundle | None = None) -> list[RunSummary]:
    """One pipeline run per training fraction; all of them share the same test nodes."""
    bundle = bundle if bundle is not None else load_dataset(cfg.dataset)
    fractions = list(cfg.fractions if fractions is None else fractions)
    return [run_pipeline(cfg.replace(split=float(x)), bundle) for x in fractions]


def run_clustering_eval(cfg: ExperimentConfig, summary: RunSummary | None = None,
                        bundle: DatasetBundle | None = None) -> dict:
    """k-means (k = number of classes) on each repeat's node embeddings; median ARI and NMI."""
    if summary is None:
        bundle = bundle if bundle is not None else load_dataset(cfg.dataset)
        summary = run_pipeline(cfg, bundle)
    if not summary.repeats or any(r.embeddings is None for r in summary.repeats):
        raise ConfigError("run has no node embeddings to cluster")
    labels = summary.guard.read("all")
    nodes = np.arange(labels.size) if cfg.cluster_nodes == "all" else summary.test_nodes
    k = int(labels.max()) + 1
    aris, nmis = [], []
    for r, rep in enumerate(summary.repeats):
        res = kmeans(rep.embeddings[nodes], k, seeding.stage_seed(cfg.seed, seeding.KMEANS, r), cfg.kmeans_restarts)
        aris.append(ari(labels[nodes], res.assignments))
        nmis.append(nmi(labels[nodes], res.assignments))
    report = {
        "k": k,
        "nodes": cfg.cluster_nodes,
        "ari": aris,
        "nmi": nmis,
        "median": {"ari": float(np.median(aris)), "nmi": float(np.median(nmis))},
        "std": {"ari": float(np.std(aris)), "nmi": float(np.std(nmis))},
    }
    summary.clustering = report
    return report


def _fmt(x: float) -> str:
    return repr(float(x))


def emit_report(summaries: Sequence[RunSummary], out_dir) -> Path:
    """Write results.tsv, results.json, attention.json and per-run artefacts."""
    if not summaries:
        raise ConfigError("nothing to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["dataset\tvariant\tsplit\tmetric\tmedian\tstd"]
    for s in summaries:
        rows = [(m, s.median[m], s.std[m]) for m in METRICS]
        if s.clustering:
            rows += [(m, s.clustering["median"][m], s.clustering["std"][m]) for m in ("ari", "nmi")]
        lines += [f"{s.dataset}\t{s.variant}\t{s.split}\t{m}\t{_fmt(med)}\t{_fmt(sd)}" for m, med, sd in rows]
    (out / "results.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / "results.json").write_text(json.dumps([s.to_json() for s in summaries], indent=2), encoding="utf-8")

    with_attention = [s for s in summaries if s.attention is not None]
    if with_attention:
        with_attention[-1].attention.save(out / "attention.json")
    for s in summaries:
        run_dir = out / f"{s.dataset}_{s.variant}_{s.split}".replace(":", "-")
        _write_run_artifacts(s, run_dir)
    return out


def _write_run_artifacts(s: RunSummary, run_dir: Path) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    first = s.repeats[0]
    np.savetxt(run_dir / "embeddings.csv", first.embeddings, delimiter=",", fmt="%.9g")
    with open(run_dir / "predictions.tsv", "w", encoding="utf-8") as fh:
        for node, t, p in zip(s.test_nodes, s.test_labels, first.test_predictions):
            fh.write(f"{int(node)}\t{int(t)}\t{int(p)}\n")
    metrics = {
        "metadata": {"dataset": s.dataset, "variant": s.variant, "split": s.split,
                     "seeds": [r.seed for r in s.repeats], "chosen": s.chosen},
        "repeats": [r.report.to_dict() for r in s.repeats],
        "median": s.median,
        "std": s.std,
        "clustering": s.clustering,
    }
    (run_dir / "metrics.json").write_text(json.dumps(metrics, indent=2), encoding="utf-8")
    if s.attention is not None:
        s.attention.save(run_dir / "attention.json")
    if s.fused is not None:
        s.fused.save(run_dir / "fused_edges.tsv", run_dir / "fused_meta.json")
