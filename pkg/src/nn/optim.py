"""
SGD with momentum and L2 weight decay for SceneMix
"""

import copy
from dataclasses import asdict, dataclass, fields

import numpy as np

from ..errors import ConfigError, NumericError
from .layers import softmax_cross_entropy
from .network import ModelState, backward, forward, with_buffers

# Only conv/dense kernels are decayed; biases and batchnorm gamma/beta are not
DECAYED_PARAMS = ("kernel",)


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.002
    lr_schedule: str = "step"  # "constant" or "step"
    step_factor: float = 0.5
    step_every: int = 30  # epochs

    def __post_init__(self):
        # lr = 0 is accepted to freeze a model in smoke runs
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.lr_schedule not in ("constant", "step"):
            raise ConfigError(f"lr_schedule must be 'constant' or 'step', got {self.lr_schedule!r}")
        if self.lr_schedule == "step" and (self.step_every < 1 or self.step_factor <= 0):
            raise ConfigError("step schedule needs step_every >= 1 and step_factor > 0")

    def learning_rate_at(self, epoch: int) -> float:
        """Learning rate for a 0-based epoch index."""
        if self.lr_schedule == "constant":
            return self.learning_rate
        return self.learning_rate * self.step_factor ** (epoch // self.step_every)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "OptimizerConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown optimizer settings: {', '.join(sorted(unknown))}")
        return cls(**data)


def sgd_step(state: ModelState, grads: list, config: OptimizerConfig, epoch: int = 0) -> ModelState:
    """
    One momentum SGD update.

    velocity = momentum * velocity + grad + weight_decay * param (kernels only)
    param -= lr * velocity
    """
    lr = config.learning_rate_at(epoch)
    velocity = state.velocity or [dict() for _ in state.params]
    new_params, new_velocity = [], []

    for index, (layer_params, layer_grads) in enumerate(zip(state.params, grads)):
        updated_params, updated_velocity = {}, {}
        for name, param in layer_params.items():
            grad = layer_grads[name]
            if grad.shape != param.shape:
                raise ConfigError(f"layer {index} {name}: gradient shape {grad.shape} != parameter shape {param.shape}")
            if not np.all(np.isfinite(grad)):
                kind = state.spec.layers[index].kind.value
                raise NumericError(f"non-finite gradient in layer {index} ({kind}) {name}")

            step = grad
            if config.weight_decay and name in DECAYED_PARAMS:
                step = step + config.weight_decay * param
            v = velocity[index].get(name)
            v = step if v is None else config.momentum * v + step
            updated_velocity[name] = v.astype(param.dtype, copy=False)
            updated_params[name] = (param - lr * updated_velocity[name]).astype(param.dtype, copy=False)
        new_params.append(updated_params)
        new_velocity.append(updated_velocity)

    updated = copy.copy(state)
    updated.params = new_params
    updated.velocity = new_velocity
    return updated


def train_step(
    state: ModelState,
    x: np.ndarray,
    targets: np.ndarray,
    config: OptimizerConfig,
    epoch: int = 0
):
    """Forward (train mode), cross-entropy, backward and one SGD update. Returns (state, loss, probabilities)."""
    probs, cache = forward(state, x, mode="train")
    loss, grad_logits = softmax_cross_entropy(cache.logits, targets.astype(cache.logits.dtype, copy=False))
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss {loss}")
    grads = backward(state, cache, grad_logits)
    state = sgd_step(with_buffers(state, cache.new_buffers), grads, config, epoch)
    return state, loss, probs
