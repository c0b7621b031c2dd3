"""Collage prompting toolkit.

Grid geometry and collage graphs, a graph-network accuracy surrogate, genetic
arrangement search, cost metrics, dataset documents and recognition backends.
"""

from .grid import Arrangement, CollageGraph, GridSpec, adjacency_from_arrangement, build_collage_graph
from .features import FeatureStore, load_feature_store, save_feature_store, synth_features
from .predictor import PredictorConfig, PredictorParams, forward, init_params, load_params, save_params
from .training import TrainConfig, train
from .search import GaConfig, brute_force, lcp_optimize
from .metrics import CostModel, cer, cost_per_1k, pce, position_accuracy

__version__ = "0.1.0"

__all__ = [
    "Arrangement", "CollageGraph", "GridSpec", "adjacency_from_arrangement", "build_collage_graph",
    "FeatureStore", "load_feature_store", "save_feature_store", "synth_features",
    "PredictorConfig", "PredictorParams", "forward", "init_params", "load_params", "save_params",
    "TrainConfig", "train", "GaConfig", "brute_force", "lcp_optimize",
    "CostModel", "cer", "cost_per_1k", "pce", "position_accuracy",
]
