"""
On-disk log-mel cache for SceneMix

One file per clip: magic, version, shape header (channels, n_mels, frames),
the FeatureConfig fingerprint and a row-major float32 payload. A cached entry
is only used when its fingerprint equals the current config's.
"""

import hashlib
import os
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .audio_io import read_wav
from .features import FeatureConfig, MelFilterbank, clip_log_mel, mel_filterbank
from .fileio import write_bytes_atomic
from .logger import logger

CACHE_MAGIC = b"SMFC"
CACHE_VERSION = 1
# magic, version, reserved, channels, n_mels, frames, fingerprint
HEADER = struct.Struct("<4sHHIII64s")


def encode_entry(values: np.ndarray, fingerprint: str) -> bytes:
    channels, n_mels, frames = values.shape
    header = HEADER.pack(CACHE_MAGIC, CACHE_VERSION, 0, channels, n_mels, frames, fingerprint.encode("ascii"))
    return header + np.ascontiguousarray(values, dtype="<f4").tobytes()


def decode_entry(data: bytes, fingerprint: str) -> Optional[np.ndarray]:
    """Payload of a cache file, or None when it is stale or damaged."""
    if len(data) < HEADER.size:
        return None
    magic, version, _reserved, channels, n_mels, frames, stored = HEADER.unpack_from(data, 0)
    if magic != CACHE_MAGIC or version != CACHE_VERSION:
        return None
    if stored.decode("ascii", errors="replace") != fingerprint:
        return None
    if len(data) != HEADER.size + channels * n_mels * frames * 4:
        return None
    payload = np.frombuffer(data, dtype="<f4", offset=HEADER.size)
    return payload.reshape(channels, n_mels, frames).astype(np.float32)


class FeatureCache:
    """Per-clip log-mel matrices keyed by audio path and feature config."""

    def __init__(self, cache_dir: Path, config: FeatureConfig):
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.config = config
        self.fingerprint = config.fingerprint()
        self._filterbank: Optional[MelFilterbank] = None
        self.hits = 0
        self.misses = 0

    @property
    def filterbank(self) -> MelFilterbank:
        if self._filterbank is None:
            self._filterbank = mel_filterbank(self.config)
        return self._filterbank

    def entry_path(self, audio_path: Path) -> Path:
        """Cache file for an audio file; the key covers path, size and mtime."""
        audio_path = Path(audio_path).resolve()
        stat = audio_path.stat()
        key = f"{audio_path}|{stat.st_size}|{stat.st_mtime_ns}"
        digest = hashlib.sha1(key.encode("utf-8")).hexdigest()
        return self.cache_dir / f"{digest}.smfc"

    def get(self, audio_path: Path) -> Optional[np.ndarray]:
        entry = self.entry_path(audio_path)
        if not entry.exists():
            return None
        values = decode_entry(entry.read_bytes(), self.fingerprint)
        if values is None:
            logger.warning(f"Ignoring stale or damaged cache entry {entry.name} for {audio_path}")
        return values

    def put(self, audio_path: Path, values: np.ndarray) -> Path:
        entry = self.entry_path(audio_path)
        write_bytes_atomic(entry, encode_entry(values, self.fingerprint))
        return entry

    def load(self, audio_path: Path) -> np.ndarray:
        """Cached log-mel matrix, computing and storing it on a miss."""
        values = self.get(audio_path)
        if values is not None:
            self.hits += 1
            logger.debug(f"Feature cache hit: {audio_path}")
            return values

        self.misses += 1
        values = clip_log_mel(read_wav(audio_path), self.config, self.filterbank, source=str(audio_path))
        try:
            self.put(audio_path, values)
        except OSError as e:
            logger.warning(f"Could not write feature cache entry for {audio_path}: {e}")
        return values


def default_cache_dir() -> Optional[Path]:
    """SCENEMIX_CACHE_DIR, if set."""
    override = os.environ.get("SCENEMIX_CACHE_DIR")
    return Path(override) if override else None
