"""Consistent cross-view matching of tracklets across a camera network."""

from .consistency import NetworkAssignments, reliability_table, threshold_matches
from .crossview_match import AssignmentMatrix, CostMatrix, cluster_cost_matrix, solve_assignment
from .dataset import (
    CameraDataset,
    SyntheticConfig,
    TrackletFeature,
    generate_synthetic,
    load_features,
    preprocess,
    save_features,
)
from .evaluation import evaluate_matches, evaluate_retrieval
from .intra_cluster import ClusterSet, cluster_camera
from .metric_learn import MetricModel, OptimizerConfig, build_training_set, learn_metric
from .pipeline import PipelineConfig, initial_matching, run_pipeline

__version__ = "0.1.0"
