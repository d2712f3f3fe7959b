"""
Configuration management for SceneMix

A training config is one JSON document. Loaded values are merged over
DEFAULT_CONFIG, so older files pick up new settings with their defaults;
unknown keys are errors.
"""

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

from .augment import MixupPolicy
from .errors import ConfigError
from .evaluation import AggregationStrategy
from .features import ChannelMode, FeatureConfig
from .fileio import write_text_atomic
from .logger import logger
from .nn.network import NetworkSpec, PRESETS, get_preset
from .nn.optim import OptimizerConfig

CONFIG_VERSION = 1

DEFAULT_CONFIG: dict[str, Any] = {
    "config_version": CONFIG_VERSION,
    "feature": {
        "sample_rate": 44100,
        "window_s": 0.025,
        "hop_s": 0.025,
        "fft_size": None,  # None means next power of two >= window
        "n_mels": 128,
        "fmin": 0.0,
        "fmax": None,  # None means sample_rate / 2
        "log_floor": 1e-10,
        "patch_frames": 128,
    },
    "network": "vgg_style",
    "optimizer": {
        "learning_rate": 0.01,
        "momentum": 0.9,
        "weight_decay": 0.002,
        "lr_schedule": "step",
        "step_factor": 0.5,
        "step_every": 30,
    },
    "mixup": {
        "mode": "off",  # off | fixed | beta
        "alpha": 0.0,
        "beta_param": 0.2,
    },
    "channel_mode": "multi",  # multi | single:left | single:right | single:mean
    "batch_size": 32,
    "epochs": 60,
    "seed": 0,
    "folds": 4,  # k, or a fold-plan file / DCASE evaluation-setup directory
    "strategy": "max",
    "cache_dir": None,
}

SECTIONS = ("feature", "optimizer", "mixup")
MIN_BATCH = 2  # smaller trailing batches are dropped by the training loop


@dataclass
class TrainConfig:
    feature: FeatureConfig = field(default_factory=FeatureConfig)
    network: str = "vgg_style"
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    mixup: MixupPolicy = field(default_factory=MixupPolicy)
    channel_mode: ChannelMode = field(default_factory=ChannelMode)
    batch_size: int = 32
    epochs: int = 60
    seed: int = 0
    folds: Union[int, str] = 4
    strategy: AggregationStrategy = AggregationStrategy.MAX
    cache_dir: Optional[str] = None

    def __post_init__(self):
        if isinstance(self.channel_mode, str):
            self.channel_mode = ChannelMode.parse(self.channel_mode)
        self.strategy = AggregationStrategy.parse(self.strategy)
        self.validate()

    def validate(self) -> None:
        if self.network not in PRESETS:
            raise ConfigError(f"unknown network preset {self.network!r} (choose from {', '.join(PRESETS)})")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        # batchnorm statistics and mixup partners both need two examples
        if self.batch_size < MIN_BATCH:
            raise ConfigError(f"batch_size must be >= {MIN_BATCH}, got {self.batch_size}")
        if isinstance(self.folds, bool) or (isinstance(self.folds, int) and self.folds < 1):
            raise ConfigError(f"folds must be a positive integer or a fold-plan path, got {self.folds!r}")

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return (self.channel_mode.n_channels, self.feature.n_mels, self.feature.patch_frames)

    def network_spec(self) -> NetworkSpec:
        return get_preset(self.network, input_shape=self.input_shape)

    def to_dict(self) -> dict:
        return {
            "config_version": CONFIG_VERSION,
            "feature": self.feature.to_dict(),
            "network": self.network,
            "optimizer": self.optimizer.to_dict(),
            "mixup": self.mixup.to_dict(),
            "channel_mode": str(self.channel_mode),
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "seed": self.seed,
            "folds": self.folds,
            "strategy": self.strategy.value,
            "cache_dir": self.cache_dir,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        """Merge `data` over DEFAULT_CONFIG and build a validated config."""
        merged = merge_with_defaults(data)
        try:
            return cls(
                feature=FeatureConfig.from_dict(merged["feature"]),
                network=str(merged["network"]),
                optimizer=OptimizerConfig.from_dict(merged["optimizer"]),
                mixup=MixupPolicy.from_dict(merged["mixup"]),
                channel_mode=ChannelMode.parse(str(merged["channel_mode"])),
                batch_size=int(merged["batch_size"]),
                epochs=int(merged["epochs"]),
                seed=int(merged["seed"]),
                folds=merged["folds"],
                strategy=merged["strategy"],
                cache_dir=merged["cache_dir"],
            )
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid configuration value: {e}") from e


def merge_with_defaults(data: dict) -> dict:
    """DEFAULT_CONFIG with `data` laid over it, one level deep for the sections."""
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = set(data) - set(DEFAULT_CONFIG)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
    version = data.get("config_version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config_version {version} (this build reads {CONFIG_VERSION})")

    merged = copy.deepcopy(DEFAULT_CONFIG)
    for key, value in data.items():
        if key in SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"'{key}' must be an object")
            unknown = set(value) - set(DEFAULT_CONFIG[key])
            if unknown:
                raise ConfigError(f"unknown {key} settings: {', '.join(sorted(unknown))}")
            merged[key].update(value)
        else:
            merged[key] = value
    return merged


def load_train_config(path: Path) -> TrainConfig:
    """Load a JSON training config."""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from None

    config = TrainConfig.from_dict(data)
    logger.debug(f"Loaded config {path}: {config.to_dict()}")
    return config


def save_train_config(config: TrainConfig, path: Path) -> None:
    """Write the full resolved config (atomic)."""
    write_text_atomic(Path(path), json.dumps(config.to_dict(), indent=2, ensure_ascii=False) + "\n")
