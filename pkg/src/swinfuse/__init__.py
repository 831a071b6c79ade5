"""Residual Swin Transformer fusion of infrared and visible images."""

from .config import ModelConfig, TrainConfig
from .encoder import SequenceFeatures, encode
from .fusion import FusionMode, fuse_features
from .pipeline import SwinFuse, fuse_image_pair, load_image, save_image
from .tensor import Tensor, no_grad
from .training import train
from .weights import WeightStore, load_weights, save_weights

__all__ = [
    "FusionMode",
    "ModelConfig",
    "SequenceFeatures",
    "SwinFuse",
    "Tensor",
    "TrainConfig",
    "WeightStore",
    "encode",
    "fuse_features",
    "fuse_image_pair",
    "load_image",
    "load_weights",
    "no_grad",
    "save_image",
    "save_weights",
    "train",
]
