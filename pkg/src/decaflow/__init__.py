"""Causal generative flows with hidden confounders and proxy variables."""

from importlib.metadata import PackageNotFoundError, version

from .graph import (
    CausalGraph,
    GraphError,
    QuerySpec,
    check_intervention_identifiable,
    check_query_identifiable,
    classify_edges,
    d_separated,
    load_graph,
)
from .metrics import MetricReport, ate_error, cf_error, mmd
from .model import DeCaFlowModel, TrainConfig, TrainReport, load_model, save_model, train
from .scm import Dataset, SyntheticSCM, build_ablation_scm, build_random_mechanism_scm, simulate

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0"

__all__ = [
    "CausalGraph", "GraphError", "QuerySpec", "check_intervention_identifiable", "check_query_identifiable",
    "classify_edges", "d_separated", "load_graph", "MetricReport", "ate_error", "cf_error", "mmd",
    "DeCaFlowModel", "TrainConfig", "TrainReport", "load_model", "save_model", "train", "Dataset",
    "SyntheticSCM", "build_ablation_scm", "build_random_mechanism_scm", "simulate",
]
