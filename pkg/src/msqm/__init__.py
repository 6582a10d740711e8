"""Multi-stage multiscale query-memory decoder for class-agnostic video segmentation, on a numpy autodiff core."""

from .config import TrainConfig, load_config, parse_config
from .data import SynthConfig, generate_clip, load_dataset
from .metrics import j_measure, miou
from .model import ModelConfig, VideoMaskModel

__version__ = "0.1.0"

__all__ = [
    "ModelConfig",
    "SynthConfig",
    "TrainConfig",
    "VideoMaskModel",
    "generate_clip",
    "j_measure",
    "load_config",
    "load_dataset",
    "miou",
    "parse_config",
]
