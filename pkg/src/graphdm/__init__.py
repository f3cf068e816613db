"""Globally interpretable graph classification via distilled class graphs."""

from . import autodiff, cli, data, gcn, interpret, metrics, seeding
from .data import Graph, GraphDataset
from .gcn import GcnModel, init_model
from .interpret import GdmConfig, GdmState, InterpretiveGraph, run_gdm
from .metrics import MetricsReport

__version__ = "0.1.0"

__all__ = [
    "autodiff", "cli", "data", "gcn", "interpret", "metrics", "seeding",
    "Graph", "GraphDataset", "GcnModel", "init_model",
    "GdmConfig", "GdmState", "InterpretiveGraph", "run_gdm",
    "MetricsReport", "__version__",
]
