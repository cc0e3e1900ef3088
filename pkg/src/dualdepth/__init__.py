"""Dual-network unsupervised monocular disparity estimation on a small numpy autodiff core."""
from .dualnet import DualModel, NetworkConfig
from .estimator import DualDepthEstimator
from .evaluation import CameraRig, MetricsReport, compute_metrics, evaluate_set, post_process
from .objectives import LossWeights, total_cost_dnm6, total_cost_dnm12
from .trainer import SceneSpec, StereoSample, TrainConfig, generate_scene_set, lr_at, train

__version__ = "0.1.0"

__all__ = [
    "CameraRig",
    "DualDepthEstimator",
    "DualModel",
    "LossWeights",
    "MetricsReport",
    "NetworkConfig",
    "SceneSpec",
    "StereoSample",
    "TrainConfig",
    "compute_metrics",
    "evaluate_set",
    "generate_scene_set",
    "lr_at",
    "post_process",
    "total_cost_dnm6",
    "total_cost_dnm12",
    "train",
]
