"""Graph neural segmentation of plant point clouds (soil / stem / leaf).

The pipeline: per-point PCA geometric descriptors, a KNN graph, and a
small zoo of graph networks (EdgeConv + attention flagship plus GCN,
GAT, graph U-Net and PointNet-style baselines) trained with a
from-scratch reverse-mode autodiff engine.
"""

from .cloud import (AugmentParams, CLASS_COLORS, CLASS_NAMES, LabeledCloud,
                    PointCloud, augment, downsample, normalize, read_ply,
                    read_xyz, synth_cloud, synth_dataset, write_ply, write_xyz)
from .geomfeat import (FEATURE_NAMES, FEATURE_SETS, featurize,
                       select_features)
from .graph import (GraphTopology, batch_graphs, knn_graph, knn_indices,
                    normalize_adjacency)
from .nn import ARCHITECTURES, ModelConfig, build_model
from .train import (Adam, MetricsReport, TrainConfig, cross_entropy, evaluate,
                    kfold_run, load_checkpoint, train_loop)

__version__ = "0.1.0"

__all__ = [
    "ARCHITECTURES", "Adam", "AugmentParams", "CLASS_COLORS", "CLASS_NAMES",
    "FEATURE_NAMES", "FEATURE_SETS", "GraphTopology", "LabeledCloud",
    "MetricsReport", "ModelConfig", "PointCloud", "TrainConfig", "augment",
    "batch_graphs", "build_model", "cross_entropy", "downsample", "evaluate",
    "featurize", "kfold_run", "knn_graph", "knn_indices", "load_checkpoint",
    "normalize", "normalize_adjacency", "read_ply", "read_xyz",
    "select_features", "synth_cloud", "synth_dataset", "train_loop",
    "write_ply", "write_xyz",
]
