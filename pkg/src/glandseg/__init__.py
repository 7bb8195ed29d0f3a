"""Gland instance segmentation toolkit.

Object-level metrics and rank aggregation, multichannel label derivation,
augmentation, a NumPy dilated-convolution fusion network, post-processing
into instance maps and a synthetic data generator.
"""
__version__ = "0.1.0"

from .core import (
    BoundingBox,
    FormatError,
    MetricConfig,
    ScoreRow,
    ScoreTable,
    ValidationError,
    check_binary_mask,
    check_image,
    check_instance_map,
)
from .estimators import FusionSegmenter, InstanceExtractor

__all__ = [
    "BoundingBox", "FormatError", "FusionSegmenter", "InstanceExtractor", "MetricConfig",
    "ScoreRow", "ScoreTable", "ValidationError", "__version__", "check_binary_mask",
    "check_image", "check_instance_map",
]
