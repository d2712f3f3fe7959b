"""
Audio input/output for SceneMix
Reads and writes PCM/float WAV files and synthesizes a labeled scene corpus
"""

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataError, DecodeError, ShapeError, TruncationError, UnsupportedFormatError
from .fileio import atomic_write
from .logger import logger

# RIFF/WAVE format codes
WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE

SUPPORTED_ENCODINGS = {
    (WAVE_FORMAT_PCM, 16),
    (WAVE_FORMAT_PCM, 24),
    (WAVE_FORMAT_IEEE_FLOAT, 32),
}

# The 15 scenes, ids fixed by position
SCENE_NAMES = (
    "bus",
    "cafe/restaurant",
    "car",
    "city_center",
    "forest_path",
    "grocery_store",
    "home",
    "beach",
    "library",
    "metro_station",
    "office",
    "residential_area",
    "train",
    "tram",
    "park",
)

# Long-form names accepted in manifests
SCENE_ALIASES = {
    "cafe_restaurant": "cafe/restaurant",
    "cafe": "cafe/restaurant",
    "restaurant": "cafe/restaurant",
    "lakeside_beach": "beach",
    "urban_park": "park",
    "city_centre": "city_center",
}

N_CLASSES = len(SCENE_NAMES)


@dataclass(frozen=True)
class SceneClass:
    """One of the 15 acoustic scene classes."""
    id: int
    name: str

    @property
    def slug(self) -> str:
        """Filesystem-safe name."""
        return self.name.replace("/", "_")


SCENE_CLASSES = tuple(SceneClass(i, name) for i, name in enumerate(SCENE_NAMES))


def scene_by_id(class_id: int) -> SceneClass:
    """Look up a scene by its id."""
    if not 0 <= class_id < N_CLASSES:
        raise DataError(f"scene id out of range: {class_id}")
    return SCENE_CLASSES[class_id]


def scene_by_name(name: str) -> SceneClass:
    """Look up a scene by name, tolerating case, spaces and the long-form aliases."""
    key = name.strip().lower().replace(" ", "_").replace("-", "_")
    key = SCENE_ALIASES.get(key, key)
    for scene in SCENE_CLASSES:
        if scene.name == key:
            return scene
    raise DataError(f"unknown scene class: {name!r}")


@dataclass
class AudioClip:
    """Multi-channel audio with samples shaped [channels][samples] in [-1, 1]."""
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        if self.samples.ndim != 2 or self.samples.shape[0] not in (1, 2):
            raise ShapeError(f"audio must have 1 or 2 channels, got shape {self.samples.shape}")
        if int(self.sample_rate) <= 0:
            raise DataError(f"sample rate must be positive, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)
        if not np.all(np.isfinite(self.samples)):
            raise DataError("audio contains non-finite samples")
        if self.samples.size and np.max(np.abs(self.samples)) > 1.0:
            raise DataError("audio samples outside [-1, 1]")

    @property
    def channel_count(self) -> int:
        return self.samples.shape[0]

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.num_samples / self.sample_rate


# ==================== DECODING ====================

@dataclass
class _WavFormat:
    format_code: int
    channels: int
    sample_rate: int
    block_align: int
    bits: int


def _parse_fmt(body: bytes) -> _WavFormat:
    if len(body) < 16:
        raise DecodeError("fmt ", f"chunk is {len(body)} bytes, need at least 16")
    code, channels, sample_rate, _byte_rate, block_align, bits = struct.unpack_from("<HHIIHH", body, 0)

    if code == WAVE_FORMAT_EXTENSIBLE:
        if len(body) < 26:
            raise DecodeError("fmt ", "extensible format without sub-format GUID")
        (code,) = struct.unpack_from("<H", body, 24)

    if (code, bits) not in SUPPORTED_ENCODINGS:
        raise UnsupportedFormatError(f"unsupported WAV encoding: format code {code}, {bits}-bit")
    if channels not in (1, 2):
        raise UnsupportedFormatError(f"unsupported channel count: {channels}")
    if sample_rate == 0:
        raise DecodeError("fmt ", "sample rate is zero")
    if block_align != channels * bits // 8:
        raise DecodeError("fmt ", f"block align {block_align} does not match {channels}x{bits}-bit")

    return _WavFormat(code, channels, sample_rate, block_align, bits)


def _decode_samples(payload: bytes, fmt: _WavFormat) -> np.ndarray:
    """Decode interleaved little-endian samples to float64 [frames][channels]."""
    if fmt.format_code == WAVE_FORMAT_IEEE_FLOAT:
        values = np.frombuffer(payload, dtype="<f4").astype(np.float64)
        if not np.all(np.isfinite(values)):
            raise DecodeError("data", "non-finite float sample")
        if values.size and np.max(np.abs(values)) > 1.0:
            logger.warning("Float WAV samples exceed [-1, 1]; clipping")
            values = np.clip(values, -1.0, 1.0)
    elif fmt.bits == 16:
        values = np.frombuffer(payload, dtype="<i2").astype(np.float64) / 32768.0
    else:
        raw = np.frombuffer(payload, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        ints = raw[:, 0] | (raw[:, 1] << 8) | (raw[:, 2] << 16)
        # sign-extend from 24 bits
        ints = np.where(ints & 0x800000, ints - 0x1000000, ints)
        values = ints.astype(np.float64) / float(1 << 23)
    return values.reshape(-1, fmt.channels)


def read_wav(path: Path) -> AudioClip:
    """
    Read a RIFF/WAVE file.

    Supports PCM 16/24-bit and IEEE float 32-bit, mono or stereo. Mono files
    are duplicated into two identical channels. Unknown chunks are skipped.

    Args:
        path: WAV file path

    Returns:
        AudioClip with channel 0 = left
    """
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise DecodeError("RIFF", f"file is {len(data)} bytes, shorter than the RIFF header")
    riff, _riff_size, form = struct.unpack_from("<4sI4s", data, 0)
    if riff != b"RIFF":
        raise DecodeError("RIFF", f"bad magic {riff!r}")
    if form != b"WAVE":
        raise DecodeError("RIFF", f"form type {form!r} is not WAVE")

    fmt: Optional[_WavFormat] = None
    payload: Optional[bytes] = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id, chunk_size = struct.unpack_from("<4sI", data, pos)
        body_start = pos + 8
        available = len(data) - body_start

        if chunk_id == b"fmt ":
            if chunk_size > available:
                raise DecodeError("fmt ", f"declares {chunk_size} bytes, only {available} present")
            fmt = _parse_fmt(data[body_start:body_start + chunk_size])
        elif chunk_id == b"data":
            if chunk_size > available:
                raise TruncationError(chunk_size, available)
            payload = data[body_start:body_start + chunk_size]
        else:
            logger.debug(f"Skipping WAV chunk {chunk_id!r} ({chunk_size} bytes)")

        pos = body_start + chunk_size + (chunk_size & 1)

    if fmt is None:
        raise DecodeError("fmt ", "chunk missing")
    if payload is None:
        raise DecodeError("data", "chunk missing")
    if len(payload) % fmt.block_align:
        expected = (len(payload) // fmt.block_align + 1) * fmt.block_align
        raise TruncationError(expected, len(payload))

    frames = _decode_samples(payload, fmt)
    samples = frames.T
    if fmt.channels == 1:
        samples = np.repeat(samples, 2, axis=0)

    logger.debug(f"Read {path}: {frames.shape[0]} frames, {fmt.channels} ch, {fmt.bits}-bit @ {fmt.sample_rate} Hz")
    return AudioClip(samples=samples, sample_rate=fmt.sample_rate)


# ==================== ENCODING ====================

def encode_wav(clip: AudioClip, bit_depth: int = 16) -> bytes:
    """Encode a clip as PCM WAV bytes (16 or 24-bit)."""
    if bit_depth not in (16, 24):
        raise UnsupportedFormatError(f"cannot write {bit_depth}-bit PCM (use 16 or 24)")

    scale = float(1 << (bit_depth - 1))
    ints = np.clip(np.round(clip.samples * scale), -scale, scale - 1).astype(np.int32)
    interleaved = ints.T.reshape(-1)

    if bit_depth == 16:
        payload = interleaved.astype("<i2").tobytes()
    else:
        payload = interleaved.astype("<i4").view(np.uint8).reshape(-1, 4)[:, :3].tobytes()

    # Odd-sized data chunks are padded to an even boundary; the pad byte counts toward the RIFF size
    pad = b"\x00" if len(payload) & 1 else b""
    bytes_per_sample = bit_depth // 8
    block_align = clip.channel_count * bytes_per_sample
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload) + len(pad), b"WAVE",
        b"fmt ", 16, WAVE_FORMAT_PCM, clip.channel_count, clip.sample_rate,
        clip.sample_rate * block_align, block_align, bit_depth,
        b"data", len(payload),
    )
    return header + payload + pad


def write_wav(clip: AudioClip, path: Path, bit_depth: int = 16) -> None:
    """Write a clip as a PCM WAV file (atomically)."""
    data = encode_wav(clip, bit_depth)
    with atomic_write(Path(path)) as f:
        f.write(data)
    logger.debug(f"Wrote {path}: {clip.num_samples} frames, {bit_depth}-bit")


# ==================== SYNTHETIC SCENES ====================

# Per-class signature constants
TONE_BASE_HZ = 90.0          # fundamental of class 0
TONE_STEP_RATIO = 1.22       # fundamental ratio between consecutive classes
TONE_HARMONICS = (1.0, 0.5, 0.25)
TONE_LEVEL = 0.5
NOISE_BAND_START_HZ = 400.0  # lower edge of class 0 noise band
NOISE_BAND_STEP_HZ = 1000.0
NOISE_BAND_WIDTH_HZ = 1500.0
NOISE_LEVEL = 0.3            # RMS
AM_BASE_HZ = 0.5
AM_STEP_HZ = 0.6
AM_DEPTH = 0.5
PAN_STEP = 0.3               # tone pan = ((id % 5) - 2) * PAN_STEP, noise pan opposite
MAX_NOISE_DELAY = 7          # right-channel noise lag = 1 + id % MAX_NOISE_DELAY samples
BACKGROUND_LEVEL = 0.03
PEAK_LEVEL = 0.9


def _band_noise(rng: np.random.Generator, length: int, sample_rate: int, low: float, high: float) -> np.ndarray:
    """Unit-RMS white noise restricted to [low, high] Hz."""
    white = rng.standard_normal(length)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(length, d=1.0 / sample_rate)
    spectrum[(freqs < low) | (freqs > high)] = 0.0
    band = np.fft.irfft(spectrum, n=length)
    rms = np.sqrt(np.mean(band ** 2))
    return band / rms if rms > 0 else band


def synthesize_scene(
    scene: SceneClass,
    seed: int,
    duration_s: float,
    sample_rate: int = 44100
) -> AudioClip:
    """
    Synthesize a stereo clip with the spectral signature of one scene class.

    Each class gets its own harmonic tone bank, band-limited noise band and
    amplitude-modulation rate. Tone and noise are panned in opposite
    directions by a class-specific amount and the right-channel noise lags by
    a class-specific number of samples, so the left/right channels carry
    information the mean channel loses. The seed only jitters phases, the
    fundamental (within 2%) and the noise realisation.
    """
    if duration_s <= 0:
        raise DataError(f"duration must be positive, got {duration_s}")

    n = int(round(duration_s * sample_rate))
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), scene.id]))
    nyquist = sample_rate / 2.0
    t = np.arange(n) / sample_rate

    f0 = TONE_BASE_HZ * TONE_STEP_RATIO ** scene.id * (1.0 + rng.uniform(-0.02, 0.02))
    tone = np.zeros(n)
    for harmonic, amplitude in enumerate(TONE_HARMONICS, start=1):
        if harmonic * f0 < nyquist:
            tone += amplitude * np.sin(2 * math.pi * harmonic * f0 * t + rng.uniform(0, 2 * math.pi))

    am_rate = AM_BASE_HZ + AM_STEP_HZ * scene.id
    envelope = 1.0 + AM_DEPTH * np.sin(2 * math.pi * am_rate * t + rng.uniform(0, 2 * math.pi))

    low = min(NOISE_BAND_START_HZ + NOISE_BAND_STEP_HZ * scene.id, 0.9 * nyquist)
    high = min(low + NOISE_BAND_WIDTH_HZ, 0.95 * nyquist)
    delay = 1 + scene.id % MAX_NOISE_DELAY
    noise = _band_noise(rng, n + delay, sample_rate, low, high) * NOISE_LEVEL * rng.uniform(0.8, 1.2)

    pan = ((scene.id % 5) - 2) * PAN_STEP
    left = (1.0 - 0.5 * pan) * TONE_LEVEL * tone * envelope + (1.0 + 0.5 * pan) * noise[delay:delay + n]
    right = (1.0 + 0.5 * pan) * TONE_LEVEL * tone * envelope + (1.0 - 0.5 * pan) * noise[:n]

    samples = np.stack([left, right]) + BACKGROUND_LEVEL * rng.standard_normal((2, n))
    peak = np.max(np.abs(samples)) if n else 0.0
    if peak > 0:
        samples *= PEAK_LEVEL / peak
    samples = np.clip(samples, -1.0, 1.0)

    return AudioClip(samples=samples, sample_rate=sample_rate)
