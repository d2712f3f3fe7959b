"""
Shared fixtures for the SceneMix test suite
"""

import os
import tempfile

# Keep test runs out of the per-user log directory
os.environ.setdefault("SCENEMIX_LOG_DIR", tempfile.mkdtemp(prefix="scenemix-test-logs-"))

import numpy as np
import pytest

from src.config import TrainConfig
from src.dataset import synthesize_corpus
from src.features import FeatureConfig
from src.nn.optim import OptimizerConfig

# 8 kHz, 32 ms windows: 256-point FFT, 16-frame patches of 0.512 s
SMALL_RATE = 8000
SMALL_DURATION = 1.1  # 34 frames -> 2 patches per clip


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def small_features():
    return FeatureConfig(sample_rate=SMALL_RATE, window_s=0.032, hop_s=0.032, n_mels=16, patch_frames=16)


@pytest.fixture
def small_train_config(small_features):
    """tiny network on 16x16 patches, two folds, two epochs."""
    return TrainConfig(
        feature=small_features,
        network="tiny",
        optimizer=OptimizerConfig(learning_rate=0.05, lr_schedule="constant"),
        batch_size=8,
        epochs=2,
        seed=0,
        folds=2,
    )


@pytest.fixture
def small_corpus(tmp_path):
    """30 short clips (2 per class, one location per clip)."""
    return synthesize_corpus(
        tmp_path / "corpus",
        clips_per_class=2,
        duration_s=SMALL_DURATION,
        seed=0,
        clips_per_location=1,
        sample_rate=SMALL_RATE,
    )
