"""
Checkpoint files for SceneMix models

Layout (little-endian):
    magic "SMCK", u16 version, u16 reserved, u32 metadata length
    metadata: UTF-8 JSON (network spec and its fingerprint, feature config and
              its fingerprint, channel mode, seed, tensor count)
    tensors:  u16 name length, name, u8 item size (4 or 8), u8 ndim,
              ndim x u32 dims, row-major float payload

Parameters and batchnorm buffers are stored as float32, normalization
statistics as float64 so that a reloaded model normalizes bit-identically.
"""

import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import CheckpointError, ConfigError, FingerprintMismatchError
from ..features import FeatureConfig, NormStats
from ..fileio import write_bytes_atomic
from ..logger import logger
from .network import ModelState, NetworkSpec, build_network

CHECKPOINT_MAGIC = b"SMCK"
CHECKPOINT_VERSION = 1
FILE_HEADER = struct.Struct("<4sHHI")
TENSOR_HEADER = struct.Struct("<BB")


def _tensor_bytes(name: str, array: np.ndarray, itemsize: int) -> bytes:
    encoded = name.encode("utf-8")
    dtype = "<f4" if itemsize == 4 else "<f8"
    array = np.ascontiguousarray(array, dtype=dtype)
    parts = [
        struct.pack("<H", len(encoded)),
        encoded,
        TENSOR_HEADER.pack(itemsize, array.ndim),
        struct.pack(f"<{array.ndim}I", *array.shape),
        array.tobytes(),
    ]
    return b"".join(parts)


def _named_tensors(state: ModelState) -> list[tuple[str, np.ndarray, int]]:
    tensors = []
    for index, (p, b) in enumerate(zip(state.params, state.buffers)):
        for name, value in p.items():
            tensors.append((f"layer{index}.{name}", value, 4))
        for name, value in b.items():
            tensors.append((f"layer{index}.{name}", value, 4))
    if state.norm_stats is not None:
        tensors.append(("norm.mean", state.norm_stats.mean, 8))
        tensors.append(("norm.std", state.norm_stats.std, 8))
    return tensors


def encode_checkpoint(state: ModelState) -> bytes:
    tensors = _named_tensors(state)
    metadata = {
        "spec": state.spec.to_dict(),
        "spec_fingerprint": state.fingerprint,
        "feature_config": state.feature_config.to_dict() if state.feature_config else None,
        "feature_fingerprint": state.feature_fingerprint,
        "channel_mode": state.channel_mode,
        "seed": state.seed,
        "tensor_count": len(tensors),
    }
    meta_bytes = json.dumps(metadata, sort_keys=True).encode("utf-8")
    body = [FILE_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, 0, len(meta_bytes)), meta_bytes]
    body += [_tensor_bytes(name, value, itemsize) for name, value, itemsize in tensors]
    return b"".join(body)


def save_checkpoint(state: ModelState, path: Path) -> None:
    """Write `state` atomically; momentum buffers are not saved."""
    write_bytes_atomic(Path(path), encode_checkpoint(state))
    logger.info(f"Saved checkpoint {path} ({state.spec.name}, {state.parameter_count()} parameters)")


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.data):
            raise CheckpointError(
                f"truncated checkpoint while reading {what}: need {self.offset + size} bytes, file has {len(self.data)}"
            )
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: struct.Struct, what: str) -> tuple:
        return fmt.unpack(self.take(fmt.size, what))


def decode_checkpoint(data: bytes, expected_fingerprint: Optional[str] = None) -> ModelState:
    reader = _Reader(data)
    magic, version, _reserved, meta_len = reader.unpack(FILE_HEADER, "header")
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"not a SceneMix checkpoint (magic {magic!r})")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")

    try:
        metadata = json.loads(reader.take(meta_len, "metadata").decode("utf-8"))
        spec = NetworkSpec.from_dict(metadata["spec"])
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointError(f"unreadable checkpoint metadata: {e}") from e

    if spec.fingerprint() != metadata.get("spec_fingerprint"):
        raise FingerprintMismatchError("network spec", metadata.get("spec_fingerprint"), spec.fingerprint())
    if expected_fingerprint is not None and spec.fingerprint() != expected_fingerprint:
        raise FingerprintMismatchError("network spec", expected_fingerprint, spec.fingerprint())

    feature_config = None
    if metadata.get("feature_config") is not None:
        try:
            feature_config = FeatureConfig.from_dict(metadata["feature_config"])
        except ConfigError as e:
            raise CheckpointError(f"invalid feature config in checkpoint: {e}") from e
        if feature_config.fingerprint() != metadata.get("feature_fingerprint"):
            raise FingerprintMismatchError("feature config", metadata.get("feature_fingerprint"), feature_config.fingerprint())

    # The template fixes the expected tensor names and shapes
    state = build_network(spec, seed=0)
    expected = {}
    for index, (p, b) in enumerate(zip(state.params, state.buffers)):
        for group in (p, b):
            for name, value in group.items():
                expected[f"layer{index}.{name}"] = (group, name, value.shape)

    norm = {}
    for _ in range(int(metadata.get("tensor_count", 0))):
        (name_len,) = struct.unpack("<H", reader.take(2, "tensor name length"))
        name = reader.take(name_len, "tensor name").decode("utf-8", errors="replace")
        itemsize, ndim = reader.unpack(TENSOR_HEADER, f"tensor {name}")
        if itemsize not in (4, 8):
            raise CheckpointError(f"tensor {name}: unsupported item size {itemsize}")
        shape = struct.unpack(f"<{ndim}I", reader.take(4 * ndim, f"tensor {name} shape"))
        count = int(np.prod(shape, dtype=np.int64))
        payload = reader.take(count * itemsize, f"tensor {name} payload")
        array = np.frombuffer(payload, dtype="<f4" if itemsize == 4 else "<f8").reshape(shape)

        if name in ("norm.mean", "norm.std"):
            norm[name] = array.astype(np.float64)
            continue
        if name not in expected:
            raise CheckpointError(f"unexpected tensor {name} for network {spec.name}")
        group, key, want = expected.pop(name)
        if tuple(shape) != tuple(want):
            raise CheckpointError(f"tensor {name}: shape {tuple(shape)} does not match the network spec ({tuple(want)})")
        group[key] = array.astype(np.float32)

    if expected:
        raise CheckpointError(f"checkpoint is missing tensors: {', '.join(sorted(expected))}")
    if reader.offset != len(data):
        raise CheckpointError(f"checkpoint has {len(data) - reader.offset} trailing bytes")

    if norm:
        if set(norm) != {"norm.mean", "norm.std"}:
            raise CheckpointError("checkpoint has incomplete normalization statistics")
        state.norm_stats = NormStats(mean=norm["norm.mean"], std=norm["norm.std"])
    state.feature_config = feature_config
    state.channel_mode = metadata.get("channel_mode", "multi")
    state.seed = int(metadata.get("seed", 0))
    return state


def load_checkpoint(path: Path, expected_fingerprint: Optional[str] = None) -> ModelState:
    """
    Read a checkpoint written by save_checkpoint.

    Args:
        path: Checkpoint file
        expected_fingerprint: Network spec fingerprint the caller requires

    Returns:
        ModelState with parameters, batchnorm statistics, normalization
        statistics and feature config restored (no momentum)
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    state = decode_checkpoint(path.read_bytes(), expected_fingerprint)
    logger.debug(f"Loaded checkpoint {path} ({state.spec.name})")
    return state
