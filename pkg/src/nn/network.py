"""
Network specs, presets and whole-model forward/backward for SceneMix
"""

import copy
import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np

from ..errors import ShapeError, SpecError
from ..features import FeatureConfig, NormStats
from . import layers

BN_MOMENTUM = 0.9
BN_EPSILON = 1e-5


class LayerKind(Enum):
    CONV3X3 = "conv3x3"
    DEPTHWISE3X3 = "depthwise3x3"
    POINTWISE1X1 = "pointwise1x1"
    BATCHNORM = "batchnorm"
    RELU = "relu"
    MAXPOOL2X2 = "maxpool2x2"
    GLOBAL_AVG_POOL = "global_avg_pool"
    DENSE = "dense"
    SOFTMAX = "softmax"


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    out_channels: Optional[int] = None  # conv/pointwise output channels, dense width
    stride: int = 1

    def to_dict(self) -> dict:
        data = {"kind": self.kind.value}
        if self.out_channels is not None:
            data["out_channels"] = self.out_channels
        if self.stride != 1:
            data["stride"] = self.stride
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "LayerSpec":
        try:
            kind = LayerKind(data["kind"])
        except (KeyError, ValueError):
            raise SpecError(f"unknown layer kind in {data!r}") from None
        return cls(kind=kind, out_channels=data.get("out_channels"), stride=int(data.get("stride", 1)))


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layer stack ending in global_avg_pool -> dense(n_classes) -> softmax."""
    name: str
    layers: tuple
    input_shape: tuple = (3, 128, 128)
    n_classes: int = 15

    def shape_check(self) -> list[tuple]:
        """
        Propagate shapes from input_shape; returns the shape after every layer
        (index 0 is the input). Raises SpecError naming the first bad layer.
        """
        shapes = [tuple(self.input_shape)]
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise SpecError(f"input shape must be (channels, height, width), got {self.input_shape}")

        for index, layer in enumerate(self.layers):
            shape = shapes[-1]

            def fail(reason: str):
                raise SpecError(f"layer {index} ({layer.kind.value}): {reason}; input shape {shape}")

            kind = layer.kind
            if kind in (LayerKind.CONV3X3, LayerKind.DEPTHWISE3X3, LayerKind.POINTWISE1X1, LayerKind.MAXPOOL2X2):
                if len(shape) != 3:
                    fail("needs a spatial input")
            if kind in (LayerKind.CONV3X3, LayerKind.POINTWISE1X1, LayerKind.DENSE):
                if not layer.out_channels or layer.out_channels < 1:
                    fail("needs out_channels >= 1")
            if layer.stride < 1:
                fail("stride must be >= 1")

            if kind in (LayerKind.CONV3X3, LayerKind.DEPTHWISE3X3, LayerKind.POINTWISE1X1):
                c, h, w = shape
                out_c = c if kind == LayerKind.DEPTHWISE3X3 else layer.out_channels
                shapes.append((out_c, -(-h // layer.stride), -(-w // layer.stride)))
            elif kind in (LayerKind.BATCHNORM, LayerKind.RELU):
                shapes.append(shape)
            elif kind == LayerKind.MAXPOOL2X2:
                c, h, w = shape
                if h < 2 or w < 2:
                    fail("feature map smaller than 2x2")
                shapes.append((c, h // 2, w // 2))
            elif kind == LayerKind.GLOBAL_AVG_POOL:
                if len(shape) != 3:
                    fail("needs a spatial input")
                shapes.append((shape[0],))
            elif kind == LayerKind.DENSE:
                if len(shape) != 1:
                    fail("needs a flat input (add global_avg_pool first)")
                shapes.append((layer.out_channels,))
            elif kind == LayerKind.SOFTMAX:
                if len(shape) != 1:
                    fail("needs a flat input")
                if index != len(self.layers) - 1:
                    fail("softmax must be the last layer")
                shapes.append(shape)

        tail = [layer.kind for layer in self.layers[-3:]]
        if tail != [LayerKind.GLOBAL_AVG_POOL, LayerKind.DENSE, LayerKind.SOFTMAX]:
            raise SpecError(f"layer {max(len(self.layers) - 3, 0)}: network must end with global_avg_pool, dense, softmax")
        if shapes[-1] != (self.n_classes,):
            raise SpecError(f"layer {len(self.layers) - 2} (dense): outputs {shapes[-1]}, expected ({self.n_classes},)")
        return shapes

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "n_classes": self.n_classes,
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkSpec":
        return cls(
            name=data["name"],
            layers=tuple(LayerSpec.from_dict(d) for d in data["layers"]),
            input_shape=tuple(data["input_shape"]),
            n_classes=int(data["n_classes"]),
        )

    def fingerprint(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# ==================== PRESETS ====================

def _conv_block(channels: int, stride: int = 1) -> list[LayerSpec]:
    return [
        LayerSpec(LayerKind.CONV3X3, channels, stride),
        LayerSpec(LayerKind.BATCHNORM),
        LayerSpec(LayerKind.RELU),
    ]


def _separable_block(channels: int) -> list[LayerSpec]:
    return [
        LayerSpec(LayerKind.DEPTHWISE3X3),
        LayerSpec(LayerKind.POINTWISE1X1, channels),
        LayerSpec(LayerKind.BATCHNORM),
        LayerSpec(LayerKind.RELU),
    ]


def _head(n_classes: int) -> list[LayerSpec]:
    return [
        LayerSpec(LayerKind.GLOBAL_AVG_POOL),
        LayerSpec(LayerKind.DENSE, n_classes),
        LayerSpec(LayerKind.SOFTMAX),
    ]


def vgg_style(input_shape: tuple = (3, 128, 128), n_classes: int = 15) -> NetworkSpec:
    """4 x [conv3x3-BN-ReLU x2, maxpool] at 32/64/128/256, conv3x3-BN-ReLU(512), GAP head."""
    stack = []
    for width in (32, 64, 128, 256):
        stack += _conv_block(width) + _conv_block(width) + [LayerSpec(LayerKind.MAXPOOL2X2)]
    stack += _conv_block(512) + _head(n_classes)
    return NetworkSpec("vgg_style", tuple(stack), tuple(input_shape), n_classes)


def xception_style(input_shape: tuple = (3, 128, 128), n_classes: int = 15) -> NetworkSpec:
    """Strided conv entry, 4 x [separable-BN-ReLU x2, maxpool] at 64/128/256/256, GAP head."""
    stack = _conv_block(32, stride=2)
    for width in (64, 128, 256, 256):
        stack += _separable_block(width) + _separable_block(width) + [LayerSpec(LayerKind.MAXPOOL2X2)]
    stack += _head(n_classes)
    return NetworkSpec("xception_style", tuple(stack), tuple(input_shape), n_classes)


def tiny(input_shape: tuple = (3, 8, 8), n_classes: int = 15) -> NetworkSpec:
    """Two conv blocks; for smoke runs and whole-network gradient checks."""
    stack = _conv_block(8) + [LayerSpec(LayerKind.MAXPOOL2X2)] + _conv_block(16) + _head(n_classes)
    return NetworkSpec("tiny", tuple(stack), tuple(input_shape), n_classes)


PRESETS: dict[str, Callable[..., NetworkSpec]] = {
    "vgg_style": vgg_style,
    "xception_style": xception_style,
    "tiny": tiny,
}


def get_preset(name: str, input_shape: tuple = (3, 128, 128), n_classes: int = 15) -> NetworkSpec:
    if name not in PRESETS:
        raise SpecError(f"unknown network preset {name!r} (choose from {', '.join(PRESETS)})")
    return PRESETS[name](input_shape=tuple(input_shape), n_classes=n_classes)


# ==================== MODEL STATE ====================

@dataclass
class ModelState:
    """Learned parameters, batchnorm statistics and the context needed to use them."""
    spec: NetworkSpec
    params: list  # per layer: dict name -> array
    buffers: list  # per layer: running_mean / running_var for batchnorm
    seed: int = 0
    norm_stats: Optional[NormStats] = None
    feature_config: Optional[FeatureConfig] = None
    channel_mode: str = "multi"
    velocity: list = field(default_factory=list)  # SGD momentum, not checkpointed

    @property
    def dtype(self) -> np.dtype:
        for layer_params in self.params:
            for value in layer_params.values():
                return value.dtype
        return np.dtype(np.float32)

    @property
    def fingerprint(self) -> str:
        return self.spec.fingerprint()

    @property
    def feature_fingerprint(self) -> Optional[str]:
        return self.feature_config.fingerprint() if self.feature_config else None

    def parameter_count(self) -> int:
        return sum(v.size for layer_params in self.params for v in layer_params.values())

    def copy(self) -> "ModelState":
        return copy.deepcopy(self)


def build_network(spec: NetworkSpec, seed: int = 0, dtype=np.float32) -> ModelState:
    """Fresh model: He-uniform kernels, zero biases, gamma=1, beta=0, running stats (0, 1)."""
    shapes = spec.shape_check()
    rng = np.random.default_rng(seed)

    def he_uniform(shape: tuple, fan_in: int) -> np.ndarray:
        bound = np.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(dtype)

    params, buffers = [], []
    for index, layer in enumerate(spec.layers):
        in_shape = shapes[index]
        p, b = {}, {}
        if layer.kind == LayerKind.CONV3X3:
            c = in_shape[0]
            p["kernel"] = he_uniform((layer.out_channels, c, 3, 3), c * 9)
            p["bias"] = np.zeros(layer.out_channels, dtype=dtype)
        elif layer.kind == LayerKind.DEPTHWISE3X3:
            p["kernel"] = he_uniform((in_shape[0], 3, 3), 9)
        elif layer.kind == LayerKind.POINTWISE1X1:
            c = in_shape[0]
            p["kernel"] = he_uniform((layer.out_channels, c, 1, 1), c)
            p["bias"] = np.zeros(layer.out_channels, dtype=dtype)
        elif layer.kind == LayerKind.BATCHNORM:
            c = in_shape[0]
            p["gamma"] = np.ones(c, dtype=dtype)
            p["beta"] = np.zeros(c, dtype=dtype)
            b["running_mean"] = np.zeros(c, dtype=dtype)
            b["running_var"] = np.ones(c, dtype=dtype)
        elif layer.kind == LayerKind.DENSE:
            fan_in = in_shape[0]
            p["kernel"] = he_uniform((layer.out_channels, fan_in), fan_in)
            p["bias"] = np.zeros(layer.out_channels, dtype=dtype)
        params.append(p)
        buffers.append(b)

    return ModelState(spec=spec, params=params, buffers=buffers, seed=seed)


# ==================== FORWARD / BACKWARD ====================

@dataclass
class ForwardCache:
    mode: str
    layer_caches: list
    logits: np.ndarray
    probabilities: np.ndarray
    new_buffers: list


def forward(state: ModelState, x: np.ndarray, mode: str = "eval"):
    """
    Run the layer stack. Returns (probabilities [batch][n_classes], cache).

    Train mode normalizes batchnorm layers with batch statistics and puts the
    updated running statistics in cache.new_buffers (see with_buffers); the
    state itself is not modified.
    """
    expected = tuple(state.spec.input_shape)
    if x.ndim != 4 or tuple(x.shape[1:]) != expected:
        raise ShapeError(f"network input: expected [batch]{list(expected)}, got {list(x.shape)}")

    h = x.astype(state.dtype, copy=False)
    caches, new_buffers = [], []
    logits = None

    for index, (layer, p, b) in enumerate(zip(state.spec.layers, state.params, state.buffers)):
        kind = layer.kind
        cache = None
        updated = b
        try:
            if kind == LayerKind.CONV3X3 or kind == LayerKind.POINTWISE1X1:
                h, cache = layers.conv2d_forward(h, p["kernel"], p["bias"], stride=layer.stride)
            elif kind == LayerKind.DEPTHWISE3X3:
                h, cache = layers.depthwise_conv_forward(h, p["kernel"], stride=layer.stride)
            elif kind == LayerKind.BATCHNORM:
                h, mean, var, cache = layers.batchnorm_forward(
                    h, p["gamma"], p["beta"], b["running_mean"], b["running_var"],
                    mode=mode, momentum=BN_MOMENTUM, epsilon=BN_EPSILON
                )
                updated = {"running_mean": mean, "running_var": var}
            elif kind == LayerKind.RELU:
                h, cache = layers.relu_forward(h)
            elif kind == LayerKind.MAXPOOL2X2:
                h, cache = layers.maxpool2x2_forward(h)
            elif kind == LayerKind.GLOBAL_AVG_POOL:
                h, cache = layers.global_avg_pool_forward(h)
            elif kind == LayerKind.DENSE:
                h, cache = layers.dense_forward(h, p["kernel"], p["bias"])
            elif kind == LayerKind.SOFTMAX:
                logits = h
                h = layers.softmax(h)
        except ShapeError as e:
            raise ShapeError(f"layer {index} ({kind.value}): {e}") from e
        caches.append(cache)
        new_buffers.append(updated)

    return h, ForwardCache(mode=mode, layer_caches=caches, logits=logits, probabilities=h, new_buffers=new_buffers)


def backward(state: ModelState, cache: ForwardCache, grad_logits: np.ndarray) -> list:
    """
    Gradients of every parameter given d(loss)/d(logits).

    The final softmax is fused with the loss (softmax_cross_entropy returns
    the logit gradient), so backpropagation starts at the layer before it.
    Returns a list aligned with state.params.
    """
    grads = [dict() for _ in state.params]
    g = grad_logits

    for index in range(len(state.spec.layers) - 1, -1, -1):
        kind = state.spec.layers[index].kind
        c = cache.layer_caches[index]
        if kind == LayerKind.SOFTMAX:
            continue
        if kind == LayerKind.CONV3X3 or kind == LayerKind.POINTWISE1X1:
            g, grads[index]["kernel"], grads[index]["bias"] = layers.conv2d_backward(g, c)
        elif kind == LayerKind.DEPTHWISE3X3:
            g, grads[index]["kernel"] = layers.depthwise_conv_backward(g, c)
        elif kind == LayerKind.BATCHNORM:
            g, grads[index]["gamma"], grads[index]["beta"] = layers.batchnorm_backward(g, c)
        elif kind == LayerKind.RELU:
            g = layers.relu_backward(g, c)
        elif kind == LayerKind.MAXPOOL2X2:
            g = layers.maxpool2x2_backward(g, c)
        elif kind == LayerKind.GLOBAL_AVG_POOL:
            g = layers.global_avg_pool_backward(g, c)
        elif kind == LayerKind.DENSE:
            g, grads[index]["kernel"], grads[index]["bias"] = layers.dense_backward(g, c)

    return grads


def with_buffers(state: ModelState, new_buffers: list) -> ModelState:
    """Shallow copy of `state` carrying updated batchnorm statistics."""
    updated = copy.copy(state)
    updated.buffers = new_buffers
    return updated


def predict_proba(state: ModelState, x: np.ndarray, batch_size: int = 32) -> np.ndarray:
    """Eval-mode probabilities, processed in fixed-size chunks."""
    outputs = []
    for start in range(0, len(x), batch_size):
        probs, _ = forward(state, x[start:start + batch_size], mode="eval")
        outputs.append(probs)
    if not outputs:
        return np.zeros((0, state.spec.n_classes), dtype=state.dtype)
    return np.concatenate(outputs)
