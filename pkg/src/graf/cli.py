"""Command line entry point: ``graf run | sweep-splits | cluster | fuse``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiments
from .attention import AttentionBundle
from .experiments import ConfigError, ExperimentConfig, LeakageError
from .fusion import FusionError, eliminate_edges, fuse
from .graph import AssociationNetwork, GraphError
from .training import TrainingError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_TRAINING = 0, 2, 3, 4

_FUSE_VARIANTS = {"graf": "full", "graf_att": "full", "graf_node": "node_only", "graf_asc": "assoc_only",
                  "full": "full", "node_only": "node_only", "assoc_only": "assoc_only"}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--seed", type=int)
    p.add_argument("--repeats", type=int, help="evaluation repeats R")
    p.add_argument("--variant")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graf", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("run", help="tune, train and evaluate one variant"))
    sweep = sub.add_parser("sweep-splits", help="run one variant across training fractions")
    _common(sweep)
    sweep.add_argument("--fractions", type=float, nargs="+")
    _common(sub.add_parser("cluster", help="run a variant and cluster its node embeddings"))
    f = sub.add_parser("fuse", help="build a fused graph from attention.json")
    f.add_argument("--attention", required=True)
    f.add_argument("--out", required=True, help="fused_edges.tsv path")
    f.add_argument("--variant", default="full")
    f.add_argument("--eliminate", action="store_true")
    f.add_argument("--seed", type=int, default=0)
    return parser


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    changes = {k: v for k, v in (("seed", args.seed), ("repeats", args.repeats),
                                 ("variant", args.variant), ("out", args.out)) if v is not None}
    return cfg.replace(**changes) if changes else cfg


def _fuse(args) -> int:
    variant = _FUSE_VARIANTS.get(args.variant)
    if variant is None:
        raise ConfigError(f"unknown fusion variant {args.variant!r}")
    try:
        bundle = AttentionBundle.load(args.attention)
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise GraphError(f"cannot read {args.attention}: {exc}") from exc
    nets = [AssociationNetwork(name, edges) for name, edges in bundle.edges.items()]
    graph = fuse(bundle, nets, variant)
    if args.eliminate:
        graph = eliminate_edges(graph, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    graph.save(out, out.with_name("fused_meta.json"))
    print(f"wrote {graph.scores.size} arcs to {out}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "fuse":
            return _fuse(args)
        cfg = _config(args)
        if args.command == "run":
            summaries = [experiments.run_pipeline(cfg)]
        elif args.command == "sweep-splits":
            summaries = experiments.run_split_sweep(cfg, args.fractions)
        else:
            summary = experiments.run_pipeline(cfg)
            experiments.run_clustering_eval(cfg, summary)
            summaries = [summary]
        out = experiments.emit_report(summaries, cfg.out)
        print((out / "results.tsv").read_text(encoding="utf-8"), end="")
        return EXIT_OK
    except (ConfigError, FusionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GraphError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, LeakageError, FloatingPointError) as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING


if __name__ == "__main__":
    sys.exit(main())
