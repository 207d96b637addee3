"""Sensor-flexible per-pixel flood classification.

A small multi-modal transformer over channel-group tokens with masking, so
any subset of sensor groups (SAR, multispectral, or both) can drive
inference from a single trained model.
"""

__version__ = "0.1.0"

from .channels import ChannelGroup, DATA_GROUPS, UNUSED_GROUPS
from .evaluation import ConfusionCounts, MS_ONLY, MS_SAR, SAR_ONLY, Scenario
from .head import FocalLossConfig
from .model import ModelBundle, ModelConfig
from .tokenizer import NormStats, PixelSample
from .train import TrainConfig

__all__ = [
    "ChannelGroup", "DATA_GROUPS", "UNUSED_GROUPS",
    "ConfusionCounts", "Scenario", "SAR_ONLY", "MS_ONLY", "MS_SAR",
    "FocalLossConfig", "ModelBundle", "ModelConfig",
    "NormStats", "PixelSample", "TrainConfig",
    "__version__",
]
