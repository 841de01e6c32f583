"""Dense-instance separation for weakly-supervised change detection, at desk scale."""

from .cam import compute_cam, normalize_cam, predict_change, raw_cam
from .grid import BinaryMask, Dim2, FeatureMap, InstanceIdMask, ScoreMap, mask_and, pixel_features
from .localize import ThresholdConfig, changed_localization, masks_from_ground_truth, unchanged_localization
from .retrieve import (InstanceTable, connectivity_search, extract_background_features,
                       extract_instance_features)
from .separate import (LossBreakdown, SeparationConfig, background_branch, changed_branch, separation_loss,
                       total_loss, unchanged_image_branch)

__version__ = "0.1.0"

__all__ = [
    "compute_cam",
    "normalize_cam",
    "predict_change",
    "raw_cam",
    "BinaryMask",
    "Dim2",
    "FeatureMap",
    "InstanceIdMask",
    "ScoreMap",
    "mask_and",
    "pixel_features",
    "ThresholdConfig",
    "changed_localization",
    "masks_from_ground_truth",
    "unchanged_localization",
    "InstanceTable",
    "connectivity_search",
    "extract_background_features",
    "extract_instance_features",
    "LossBreakdown",
    "SeparationConfig",
    "background_branch",
    "changed_branch",
    "separation_loss",
    "total_loss",
    "unchanged_image_branch",
]
