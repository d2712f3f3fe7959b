"""
Mixup data augmentation for SceneMix

Virtual examples are convex combinations of two patches and their labels:
x = alpha * x_i + (1 - alpha) * x_j, y = alpha * y_i + (1 - alpha) * y_j.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import ConfigError, ShapeError
from .features import LogMelTensor


class MixupMode(Enum):
    OFF = "off"
    FIXED = "fixed"
    BETA = "beta"


@dataclass
class LabeledExample:
    """A patch and its probability vector over the scene classes."""
    features: LogMelTensor
    label: np.ndarray

    def __post_init__(self):
        self.label = np.asarray(self.label, dtype=np.float64)
        if np.any(self.label < 0) or abs(self.label.sum() - 1.0) > 1e-6:
            raise ShapeError("label must be a probability vector")


@dataclass(frozen=True)
class MixupPolicy:
    mode: MixupMode = MixupMode.OFF
    alpha: float = 0.0  # fixed mode mixing ratio
    beta_param: float = 0.2  # beta mode concentration

    def __post_init__(self):
        if not isinstance(self.mode, MixupMode):
            object.__setattr__(self, "mode", MixupMode(self.mode))
        if self.mode == MixupMode.FIXED and not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"mixup alpha must be in [0, 1], got {self.alpha}")
        if self.mode == MixupMode.BETA and self.beta_param <= 0:
            raise ConfigError(f"mixup beta_param must be positive, got {self.beta_param}")

    @property
    def is_identity(self) -> bool:
        """True when mixing can never change a batch (off, or fixed at an endpoint)."""
        return self.mode == MixupMode.OFF or (self.mode == MixupMode.FIXED and self.alpha in (0.0, 1.0))

    @property
    def ratio_key(self) -> str:
        """Label used in comparison tables; 'off' counts as alpha 0."""
        if self.mode == MixupMode.BETA:
            return f"beta({self.beta_param:g})"
        if self.mode == MixupMode.OFF:
            return "0"
        return f"{self.alpha:g}"

    def to_dict(self) -> dict:
        return {"mode": self.mode.value, "alpha": self.alpha, "beta_param": self.beta_param}

    @classmethod
    def from_dict(cls, data: dict) -> "MixupPolicy":
        unknown = set(data) - {"mode", "alpha", "beta_param"}
        if unknown:
            raise ConfigError(f"unknown mixup settings: {', '.join(sorted(unknown))}")
        try:
            mode = MixupMode(data.get("mode", "off"))
        except ValueError:
            raise ConfigError(f"unknown mixup mode: {data.get('mode')!r}") from None
        return cls(mode=mode, alpha=float(data.get("alpha", 0.0)), beta_param=float(data.get("beta_param", 0.2)))


def mixup_pair(a: LabeledExample, b: LabeledExample, alpha: float) -> LabeledExample:
    """alpha * a + (1 - alpha) * b for features and labels; the endpoints return copies of a or b."""
    if a.features.values.shape != b.features.values.shape or a.label.shape != b.label.shape:
        raise ShapeError(f"cannot mix shapes {a.features.values.shape} and {b.features.values.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"mixup alpha must be in [0, 1], got {alpha}")

    if alpha == 1.0:
        source = a
    elif alpha == 0.0:
        source = b
    else:
        values = alpha * a.features.values + (1.0 - alpha) * b.features.values
        label = alpha * a.label + (1.0 - alpha) * b.label
        features = LogMelTensor(values=values.astype(a.features.values.dtype), source=a.features.source, index=a.features.index)
        return LabeledExample(features=features, label=label)

    features = LogMelTensor(values=source.features.values.copy(), source=source.features.source, index=source.features.index)
    return LabeledExample(features=features, label=source.label.copy())


def sample_alpha(policy: MixupPolicy, rng: np.random.Generator) -> float:
    """Mixing ratio for one batch."""
    if policy.mode == MixupMode.OFF:
        return 1.0
    if policy.mode == MixupMode.FIXED:
        return float(policy.alpha)
    return float(rng.beta(policy.beta_param, policy.beta_param))


def mixup_batch(
    batch: Sequence[LabeledExample],
    policy: MixupPolicy,
    rng: np.random.Generator
) -> list[LabeledExample]:
    """
    Mix every example with a partner picked by a random permutation.

    One alpha is drawn per batch, then one permutation (a partner may be the
    example itself). With mode=off the input is returned unchanged and the
    stream is not touched.
    """
    if len(batch) == 0:
        raise ShapeError("cannot mix an empty batch")
    if policy.mode == MixupMode.OFF:
        return list(batch)

    alpha = sample_alpha(policy, rng)
    partners = rng.permutation(len(batch))
    return [mixup_pair(example, batch[j], alpha) for example, j in zip(batch, partners)]


def mixup_arrays(
    features: np.ndarray,
    labels: np.ndarray,
    policy: MixupPolicy,
    rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Stacked-array form of mixup_batch; consumes the stream the same way."""
    if policy.mode == MixupMode.OFF:
        return features, labels

    alpha = sample_alpha(policy, rng)
    partners = rng.permutation(len(features))
    if alpha == 1.0:
        return features.copy(), labels.copy()
    if alpha == 0.0:
        return features[partners], labels[partners]

    mixed = alpha * features + (1.0 - alpha) * features[partners]
    mixed_labels = alpha * labels + (1.0 - alpha) * labels[partners]
    return mixed.astype(features.dtype), mixed_labels.astype(labels.dtype)
