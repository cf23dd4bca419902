"""Point-cloud semantic segmentation with a from-scratch numpy autodiff core.

The network pairs an attention encoder over separate position and color
streams with a split-branch decoder and a two-head neighborhood vote.
"""

from .errors import (
    ConfigError,
    ContractError,
    DegenerateBatchError,
    DimensionError,
    EmptyNeighborhoodError,
    FormatError,
    MCNetError,
    NumericError,
    PLYParseError,
)
from .harness import (
    ablate,
    evaluate,
    ksweep,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
    train_and_evaluate,
    weighted_cross_entropy,
)
from .metrics import ConfusionMatrix, iou_per_class, mean_iou, metrics_report, overall_accuracy
from .model import Ablation, MCNet, ModelConfig, build_model
from .pointcloud import PointCloud, SceneSpec, load_ply, save_ply, synth_scene
from .spatial import NeighborIndex, knn_bruteforce, knn_grid, knn_self

__version__ = "0.1.0"

__all__ = [
    "Ablation", "ConfigError", "ConfusionMatrix", "ContractError", "DegenerateBatchError",
    "DimensionError", "EmptyNeighborhoodError", "FormatError", "MCNet", "MCNetError",
    "ModelConfig", "NeighborIndex", "NumericError", "PLYParseError", "PointCloud", "SceneSpec",
    "ablate", "build_model", "evaluate", "iou_per_class", "knn_bruteforce", "knn_grid",
    "knn_self", "ksweep", "load_checkpoint", "load_ply", "mean_iou", "metrics_report",
    "overall_accuracy", "predict", "save_checkpoint", "save_ply", "synth_scene", "train",
    "train_and_evaluate", "weighted_cross_entropy",
]
