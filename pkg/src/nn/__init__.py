"""
Numpy CNN engine for SceneMix: layers, network specs, SGD and checkpoints
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .network import (
    LayerKind,
    LayerSpec,
    ModelState,
    NetworkSpec,
    PRESETS,
    backward,
    build_network,
    forward,
    get_preset,
    predict_proba,
)
from .optim import OptimizerConfig, sgd_step, train_step

__all__ = [
    "LayerKind",
    "LayerSpec",
    "ModelState",
    "NetworkSpec",
    "OptimizerConfig",
    "PRESETS",
    "backward",
    "build_network",
    "forward",
    "get_preset",
    "load_checkpoint",
    "predict_proba",
    "save_checkpoint",
    "sgd_step",
    "train_step",
]
