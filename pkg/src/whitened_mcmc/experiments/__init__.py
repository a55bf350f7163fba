"""Config-driven experiment runners and data ingestion."""

from .config import ExperimentConfig, load_config, parse_config_text
from .io import ingest_mnist_idx, make_clusters, pca_project
from .runners import (run_active_learning, run_convolution_acf, run_darcy_hier, run_experiment, run_fig1_sweep,
                      run_graph_ssl)

__all__ = [
    "ExperimentConfig", "load_config", "parse_config_text", "ingest_mnist_idx", "make_clusters", "pca_project",
    "run_active_learning", "run_convolution_acf", "run_darcy_hier", "run_experiment", "run_fig1_sweep",
    "run_graph_ssl",
]
