"""
Layer kernels for the SceneMix engine

Every layer is a forward/backward pair of plain functions over numpy arrays.
Forward returns (output, cache); backward takes the upstream gradient and
that cache. Spatial tensors are [batch][channels][height][width].
"""

from typing import Optional

import numpy as np

from ..errors import DataError, ShapeError


# ==================== CONVOLUTION ====================

def _output_geometry(size: int, kernel: int, stride: int, padding: str) -> tuple[int, int, int]:
    """(output size, pad before, pad after) along one axis."""
    if padding == "same":
        out = -(-size // stride)
        total = max((out - 1) * stride + kernel - size, 0)
        return out, total // 2, total - total // 2
    if padding == "valid":
        out = (size - kernel) // stride + 1
        if out < 1:
            raise ShapeError(f"input size {size} is smaller than kernel {kernel}")
        return out, 0, 0
    raise ShapeError(f"unknown padding mode: {padding!r}")


def _pad(x: np.ndarray, kernel: tuple[int, int], stride: int, padding: str):
    _, _, h, w = x.shape
    ho, top, bottom = _output_geometry(h, kernel[0], stride, padding)
    wo, left, right = _output_geometry(w, kernel[1], stride, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (top, bottom), (left, right))) if top + bottom + left + right else x
    return xp, ho, wo, (top, left)


def _tap(i: int, j: int, ho: int, wo: int, stride: int) -> tuple:
    """Slice of the padded input seen by kernel tap (i, j)."""
    return (
        slice(None),
        slice(None),
        slice(i, i + stride * (ho - 1) + 1, stride),
        slice(j, j + stride * (wo - 1) + 1, stride),
    )


def conv2d_forward(
    x: np.ndarray,
    kernels: np.ndarray,
    bias: Optional[np.ndarray],
    stride: int = 1,
    padding: str = "same"
):
    """
    Cross-correlation with [out_c][in_c][kh][kw] kernels.

    Computed as a sum over kernel taps, each tap one matrix product of the
    shifted input with a [out_c][in_c] slice of the kernel.
    """
    if x.ndim != 4 or kernels.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernels, got {x.shape} and {kernels.shape}")
    if x.shape[1] != kernels.shape[1]:
        raise ShapeError(f"conv2d input has {x.shape[1]} channels, kernels expect {kernels.shape[1]}")

    kh, kw = kernels.shape[2:]
    xp, ho, wo, offset = _pad(x, (kh, kw), stride, padding)

    acc = np.zeros((kernels.shape[0], x.shape[0], ho, wo), dtype=np.result_type(x, kernels))
    for i in range(kh):
        for j in range(kw):
            acc += np.tensordot(kernels[:, :, i, j], xp[_tap(i, j, ho, wo, stride)], axes=([1], [1]))

    out = acc.transpose(1, 0, 2, 3)
    if bias is not None:
        out = out + bias[None, :, None, None]
    cache = (xp, kernels, stride, offset, x.shape, bias is not None)
    return np.ascontiguousarray(out), cache


def conv2d_backward(grad_out: np.ndarray, cache):
    """Returns (grad_input, grad_kernels, grad_bias or None)."""
    xp, kernels, stride, (top, left), in_shape, has_bias = cache
    kh, kw = kernels.shape[2:]
    ho, wo = grad_out.shape[2:]
    g = grad_out.transpose(1, 0, 2, 3)  # [out_c][batch][ho][wo]

    grad_xp = np.zeros_like(xp)
    grad_k = np.zeros_like(kernels)
    for i in range(kh):
        for j in range(kw):
            tap = _tap(i, j, ho, wo, stride)
            grad_k[:, :, i, j] = np.tensordot(g, xp[tap], axes=([1, 2, 3], [0, 2, 3]))
            grad_xp[tap] += np.tensordot(kernels[:, :, i, j], g, axes=([0], [0])).transpose(1, 0, 2, 3)

    _, _, h, w = in_shape
    grad_x = grad_xp[:, :, top:top + h, left:left + w]
    grad_b = grad_out.sum(axis=(0, 2, 3)) if has_bias else None
    return np.ascontiguousarray(grad_x), grad_k, grad_b


def depthwise_conv_forward(x: np.ndarray, kernels: np.ndarray, stride: int = 1, padding: str = "same"):
    """Per-channel spatial convolution with [channels][kh][kw] kernels."""
    if x.ndim != 4 or kernels.ndim != 3 or x.shape[1] != kernels.shape[0]:
        raise ShapeError(f"depthwise conv: input {x.shape} does not match kernels {kernels.shape}")

    kh, kw = kernels.shape[1:]
    xp, ho, wo, offset = _pad(x, (kh, kw), stride, padding)

    out = np.zeros((x.shape[0], x.shape[1], ho, wo), dtype=np.result_type(x, kernels))
    for i in range(kh):
        for j in range(kw):
            out += xp[_tap(i, j, ho, wo, stride)] * kernels[:, i, j][None, :, None, None]
    return out, (xp, kernels, stride, offset, x.shape)


def depthwise_conv_backward(grad_out: np.ndarray, cache):
    """Returns (grad_input, grad_kernels)."""
    xp, kernels, stride, (top, left), in_shape = cache
    kh, kw = kernels.shape[1:]
    ho, wo = grad_out.shape[2:]

    grad_xp = np.zeros_like(xp)
    grad_k = np.zeros_like(kernels)
    for i in range(kh):
        for j in range(kw):
            tap = _tap(i, j, ho, wo, stride)
            grad_k[:, i, j] = (grad_out * xp[tap]).sum(axis=(0, 2, 3))
            grad_xp[tap] += grad_out * kernels[:, i, j][None, :, None, None]

    _, _, h, w = in_shape
    return np.ascontiguousarray(grad_xp[:, :, top:top + h, left:left + w]), grad_k


def depthwise_separable_forward(
    x: np.ndarray,
    depthwise_kernels: np.ndarray,
    pointwise_kernels: np.ndarray,
    pointwise_bias: Optional[np.ndarray] = None,
    stride: int = 1
):
    """3x3 depthwise convolution followed by a 1x1 pointwise convolution."""
    mid, depthwise_cache = depthwise_conv_forward(x, depthwise_kernels, stride=stride)
    out, pointwise_cache = conv2d_forward(mid, pointwise_kernels, pointwise_bias)
    return out, (depthwise_cache, pointwise_cache)


def depthwise_separable_backward(grad_out: np.ndarray, cache):
    """Returns (grad_input, grad_depthwise, grad_pointwise, grad_pointwise_bias)."""
    depthwise_cache, pointwise_cache = cache
    grad_mid, grad_pw, grad_pb = conv2d_backward(grad_out, pointwise_cache)
    grad_x, grad_dw = depthwise_conv_backward(grad_mid, depthwise_cache)
    return grad_x, grad_dw, grad_pw, grad_pb


# ==================== NORMALIZATION ====================

def _reduce_axes(x: np.ndarray) -> tuple[int, ...]:
    """Batch and spatial axes; channels stay on axis 1."""
    return (0,) + tuple(range(2, x.ndim))


def _per_channel(v: np.ndarray, ndim: int) -> np.ndarray:
    return v.reshape((1, -1) + (1,) * (ndim - 2))


def batchnorm_forward(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    mode: str = "train",
    momentum: float = 0.9,
    epsilon: float = 1e-5
):
    """
    Batch normalization per channel over (batch, height, width).

    Returns (output, new_running_mean, new_running_var, cache). Eval mode
    uses and returns the running statistics unchanged.
    """
    if gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"batchnorm parameters {gamma.shape}/{beta.shape} do not match {x.shape[1]} channels")

    axes = _reduce_axes(x)
    if mode == "train":
        count = x.size // x.shape[1]
        if count <= 1:
            raise DataError("batchnorm in train mode needs more than one value per channel (batch*height*width = 1)")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        new_mean = (momentum * running_mean + (1.0 - momentum) * mean).astype(running_mean.dtype)
        new_var = (momentum * running_var + (1.0 - momentum) * var).astype(running_var.dtype)
    elif mode == "eval":
        mean, var = running_mean, running_var
        new_mean, new_var = running_mean, running_var
    else:
        raise ShapeError(f"unknown batchnorm mode: {mode!r}")

    inv_std = 1.0 / np.sqrt(var + epsilon)
    x_hat = (x - _per_channel(mean, x.ndim)) * _per_channel(inv_std, x.ndim)
    out = x_hat * _per_channel(gamma, x.ndim) + _per_channel(beta, x.ndim)
    cache = (x_hat, gamma, inv_std, mode)
    return out.astype(x.dtype, copy=False), new_mean, new_var, cache


def batchnorm_backward(grad_out: np.ndarray, cache):
    """Returns (grad_input, grad_gamma, grad_beta)."""
    x_hat, gamma, inv_std, mode = cache
    axes = _reduce_axes(grad_out)
    ndim = grad_out.ndim

    grad_gamma = (grad_out * x_hat).sum(axis=axes)
    grad_beta = grad_out.sum(axis=axes)
    grad_x_hat = grad_out * _per_channel(gamma, ndim)

    if mode == "eval":
        grad_x = grad_x_hat * _per_channel(inv_std, ndim)
    else:
        count = grad_out.size // grad_out.shape[1]
        sum_g = _per_channel(grad_x_hat.sum(axis=axes), ndim)
        sum_gx = _per_channel((grad_x_hat * x_hat).sum(axis=axes), ndim)
        grad_x = _per_channel(inv_std, ndim) / count * (count * grad_x_hat - sum_g - x_hat * sum_gx)

    return grad_x.astype(grad_out.dtype, copy=False), grad_gamma, grad_beta


# ==================== ACTIVATIONS & POOLING ====================

def relu_forward(x: np.ndarray):
    mask = x > 0
    return np.maximum(x, 0), mask


def relu_backward(grad_out: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return grad_out * mask


def maxpool2x2_forward(x: np.ndarray):
    """2x2 max pooling, stride 2. Odd trailing rows/columns are dropped; ties go to the first element in row-major order."""
    n, c, h, w = x.shape
    if h < 2 or w < 2:
        raise ShapeError(f"maxpool2x2 needs at least 2x2 input, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    windows = (
        x[:, :, :2 * h2, :2 * w2]
        .reshape(n, c, h2, 2, w2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h2, w2, 4)
    )
    argmax = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]
    return out, (argmax, x.shape)


def maxpool2x2_backward(grad_out: np.ndarray, cache) -> np.ndarray:
    argmax, in_shape = cache
    n, c, h, w = in_shape
    h2, w2 = grad_out.shape[2:]

    routed = np.zeros((n, c, h2, w2, 4), dtype=grad_out.dtype)
    np.put_along_axis(routed, argmax[..., None], grad_out[..., None], axis=-1)

    grad_x = np.zeros(in_shape, dtype=grad_out.dtype)
    grad_x[:, :, :2 * h2, :2 * w2] = (
        routed.reshape(n, c, h2, w2, 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, 2 * h2, 2 * w2)
    )
    return grad_x


def global_avg_pool_forward(x: np.ndarray):
    """[batch][channels][h][w] -> [batch][channels]."""
    return x.mean(axis=(2, 3)), x.shape


def global_avg_pool_backward(grad_out: np.ndarray, in_shape) -> np.ndarray:
    h, w = in_shape[2:]
    return np.broadcast_to(grad_out[:, :, None, None] / (h * w), in_shape).astype(grad_out.dtype)


def dense_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray):
    """x @ kernel.T + bias with kernel [out][in]."""
    if x.ndim != 2 or x.shape[1] != kernel.shape[1]:
        raise ShapeError(f"dense input {x.shape} does not match kernel {kernel.shape}")
    return x @ kernel.T + bias, (x, kernel)


def dense_backward(grad_out: np.ndarray, cache):
    """Returns (grad_input, grad_kernel, grad_bias)."""
    x, kernel = cache
    return grad_out @ kernel, grad_out.T @ x, grad_out.sum(axis=0)


# ==================== OUTPUT ====================

def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(grad_probs: np.ndarray, probs: np.ndarray) -> np.ndarray:
    return probs * (grad_probs - (grad_probs * probs).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits: np.ndarray, targets: np.ndarray):
    """
    Mean cross-entropy between softmax(logits) and target distributions.

    Returns (loss, grad_logits) with grad = (p - t) / batch.
    """
    if logits.shape != targets.shape:
        raise ShapeError(f"logits {logits.shape} and targets {targets.shape} differ")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    batch = logits.shape[0]
    loss = float(-(targets * log_probs).sum() / batch)
    grad = (np.exp(log_probs) - targets) / batch
    return loss, grad.astype(logits.dtype, copy=False)
