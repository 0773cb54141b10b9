"""Attention-aware fusion of multiple association networks for node classification."""
from .attention import AttentionBundle, AttentionHyperparams, extract_averaged_attention, han_predict, train_attention_model
from .estimators import GCNClassifier, GRAFClassifier, HANClassifier
from .experiments import ExperimentConfig, emit_report, run_clustering_eval, run_pipeline, run_split_sweep
from .fusion import FusedGraph, eliminate_edges, fuse, score_assoc_only, score_full, score_node_only
from .gcn import GcnHyperparams, normalize_adjacency, train_gcn
from .graph import (
    AssociationNetwork,
    DatasetBundle,
    Splits,
    TypedGraph,
    compose_meta_path,
    generate_splits,
    load_dataset,
    load_original_splits,
)
from .metrics import ari, classification_metrics, kmeans, nmi

__version__ = "0.1.0"
