"""
Log-mel feature extraction for SceneMix
Turns stereo clips into 3-channel (left, right, mean) log-mel patches
"""

import hashlib
import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence, Union

import numpy as np

from .audio_io import AudioClip
from .dsp import is_power_of_two, next_power_of_two, rfft_power
from .errors import ConfigError, DataError, ResolutionError, ShapeError, TooShortError
from .logger import logger

CHANNEL_NAMES = ("left", "right", "mean")
STD_FLOOR = 1e-6


@dataclass(frozen=True)
class FeatureConfig:
    """Front-end settings. fft_size and fmax are derived when left as None."""
    sample_rate: int = 44100
    window_s: float = 0.025
    hop_s: float = 0.025
    fft_size: Optional[int] = None  # next power of two >= window length
    n_mels: int = 128
    fmin: float = 0.0
    fmax: Optional[float] = None  # sample_rate / 2
    log_floor: float = 1e-10
    patch_frames: int = 128

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.fft_size is None:
            object.__setattr__(self, "fft_size", next_power_of_two(self.window_length))
        if self.fmax is None:
            object.__setattr__(self, "fmax", self.sample_rate / 2.0)
        self.validate()

    @property
    def window_length(self) -> int:
        """Window length in samples, floor(window_s * sample_rate)."""
        return int(math.floor(self.window_s * self.sample_rate + 1e-9))

    @property
    def hop_length(self) -> int:
        return int(math.floor(self.hop_s * self.sample_rate + 1e-9))

    def validate(self) -> None:
        if self.window_length < 1 or self.hop_length < 1:
            raise ConfigError("window and hop must each cover at least one sample")
        if not is_power_of_two(self.fft_size):
            raise ConfigError(f"fft_size must be a power of two, got {self.fft_size}")
        if self.fft_size < self.window_length:
            raise ConfigError(f"fft_size {self.fft_size} is shorter than the window ({self.window_length})")
        if not 0 <= self.fmin < self.fmax <= self.sample_rate / 2:
            raise ConfigError(f"need 0 <= fmin < fmax <= sample_rate/2, got fmin={self.fmin}, fmax={self.fmax}")
        if self.n_mels < 1:
            raise ConfigError("n_mels must be >= 1")
        if self.patch_frames < 1:
            raise ConfigError("patch_frames must be >= 1")
        if self.log_floor <= 0:
            raise ConfigError("log_floor must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown feature settings: {', '.join(sorted(unknown))}")
        return cls(**data)

    def fingerprint(self) -> str:
        """SHA-256 over every (resolved) field."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class ChannelSet:
    """Left, right and mean channel of one clip."""
    left: np.ndarray
    right: np.ndarray
    mean: np.ndarray

    def as_list(self) -> list[np.ndarray]:
        return [self.left, self.right, self.mean]


@dataclass
class LogMelTensor:
    """One [channels][n_mels][frames] patch and where it came from."""
    values: np.ndarray
    source: Optional[str] = None  # clip path
    index: int = 0  # patch position inside the clip

    @property
    def shape(self) -> tuple:
        return self.values.shape


@dataclass
class MelFilterbank:
    weights: np.ndarray  # [n_mels][fft_size/2 + 1]
    band_edges: np.ndarray  # n_mels + 2 frequencies in Hz


@dataclass
class NormStats:
    """Per (channel, mel-bin) z-score statistics."""
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape or self.mean.ndim != 2:
            raise ShapeError(f"norm stats shapes differ: {self.mean.shape} vs {self.std.shape}")


@dataclass(frozen=True)
class ChannelMode:
    """Which feature channels feed the network: all three, or a single one."""
    kind: str = "multi"
    channel: Optional[str] = None

    def __post_init__(self):
        if self.kind == "multi" and self.channel is None:
            return
        if self.kind == "single" and self.channel in CHANNEL_NAMES:
            return
        raise ConfigError(f"invalid channel mode: {self.kind}/{self.channel}")

    @classmethod
    def parse(cls, text: str) -> "ChannelMode":
        """Accepts 'multi', 'single:left', 'single(left)' or a bare channel name."""
        value = text.strip().lower()
        if value == "multi":
            return cls("multi")
        if value in CHANNEL_NAMES:
            return cls("single", value)
        for prefix, suffix in (("single:", ""), ("single(", ")")):
            if value.startswith(prefix) and value.endswith(suffix):
                return cls("single", value[len(prefix):len(value) - len(suffix)])
        raise ConfigError(f"invalid channel mode: {text!r}")

    @property
    def indices(self) -> tuple[int, ...]:
        if self.kind == "multi":
            return (0, 1, 2)
        return (CHANNEL_NAMES.index(self.channel),)

    @property
    def n_channels(self) -> int:
        return len(self.indices)

    def __str__(self) -> str:
        return "multi" if self.kind == "multi" else f"single:{self.channel}"


# ==================== CHANNELS & FRAMING ====================

def derive_channels(clip: AudioClip) -> ChannelSet:
    """Left, right and their mean; a mono clip fills all three."""
    if clip.channel_count == 1:
        mono = clip.samples[0]
        return ChannelSet(mono.copy(), mono.copy(), mono.copy())
    left, right = clip.samples[0], clip.samples[1]
    return ChannelSet(left.copy(), right.copy(), (left + right) / 2)


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window: the first n points of the (n+1)-point symmetric window."""
    if n < 1:
        raise ConfigError(f"window length must be >= 1, got {n}")
    k = np.arange(n)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * k / n))


def frame_signal(signal: np.ndarray, config: FeatureConfig) -> np.ndarray:
    """Split a signal into [frames][window_len]; trailing samples are dropped."""
    signal = np.asarray(signal, dtype=np.float64)
    window_len, hop_len = config.window_length, config.hop_length
    if len(signal) < window_len:
        raise TooShortError("signal", window_len, len(signal))
    n_frames = (len(signal) - window_len) // hop_len + 1
    windows = np.lib.stride_tricks.sliding_window_view(signal, window_len)[::hop_len]
    return np.ascontiguousarray(windows[:n_frames])


def power_spectrum(frames: np.ndarray, window: np.ndarray, fft_size: int) -> np.ndarray:
    """Windowed, zero-padded |DFT|^2 of each frame: [frames][fft_size/2 + 1]."""
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    if not is_power_of_two(fft_size):
        raise ConfigError(f"fft_size must be a power of two, got {fft_size}")
    if fft_size < len(window):
        raise ConfigError(f"fft_size {fft_size} is shorter than the window ({len(window)})")
    return rfft_power(frames * window, fft_size)


# ==================== MEL FILTERBANK ====================

def hz_to_mel(hz):
    """HTK mel scale."""
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(config: FeatureConfig) -> MelFilterbank:
    """
    Triangular filters on n_mels + 2 HTK-mel-spaced edges between fmin and fmax.

    Each triangle is sampled at the FFT bin centre frequencies and its row is
    then scaled to a maximum of exactly 1 (the apex rarely lands on a bin).
    """
    n_bins = config.fft_size // 2 + 1
    mel_edges = np.linspace(hz_to_mel(config.fmin), hz_to_mel(config.fmax), config.n_mels + 2)
    edges = mel_to_hz(mel_edges)
    edges[0], edges[-1] = config.fmin, config.fmax

    bin_freqs = np.arange(n_bins) * config.sample_rate / config.fft_size
    lower, centre, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_freqs - lower) / (centre - lower)
    falling = (upper - bin_freqs) / (upper - centre)
    weights = np.maximum(0.0, np.minimum(rising, falling))

    peaks = weights.max(axis=1)
    empty = np.flatnonzero(peaks <= 0.0)
    if empty.size:
        raise ResolutionError(int(empty[0]), config.n_mels, config.fft_size)

    weights /= peaks[:, None]
    return MelFilterbank(weights=weights, band_edges=edges)


def log_mel(power: np.ndarray, fb: MelFilterbank, log_floor: float = 1e-10) -> np.ndarray:
    """ln(max(mel energy, floor)) as [n_mels][frames]."""
    power = np.atleast_2d(power)
    if power.shape[1] != fb.weights.shape[1]:
        raise ShapeError(f"power spectrum has {power.shape[1]} bins, filterbank expects {fb.weights.shape[1]}")
    energy = power @ fb.weights.T
    return np.log(np.maximum(energy, log_floor)).T


# ==================== PATCHES ====================

def extract_patches(
    channels: Sequence[np.ndarray],
    patch_frames: int = 128,
    source: Optional[str] = None
) -> list[LogMelTensor]:
    """Stack the per-channel log-mel matrices and cut non-overlapping patches."""
    stacked = np.stack([np.asarray(c) for c in channels])
    if stacked.ndim != 3:
        raise ShapeError(f"expected [n_mels][frames] matrices, got stacked shape {stacked.shape}")
    total = stacked.shape[2]
    if total < patch_frames:
        raise TooShortError("spectrogram", patch_frames, total)

    return [
        LogMelTensor(values=stacked[:, :, p * patch_frames:(p + 1) * patch_frames].copy(), source=source, index=p)
        for p in range(total // patch_frames)
    ]


def clip_log_mel(
    clip: AudioClip,
    config: FeatureConfig,
    filterbank: Optional[MelFilterbank] = None,
    source: Optional[str] = None
) -> np.ndarray:
    """Channels, framing, power spectra and log-mel for a whole clip: float32 [3][n_mels][frames]."""
    if clip.sample_rate != config.sample_rate:
        raise DataError(
            f"{source or 'clip'}: sample rate {clip.sample_rate} Hz does not match the feature config ({config.sample_rate} Hz)"
        )

    fb = filterbank if filterbank is not None else mel_filterbank(config)
    window = hann_window(config.window_length)

    matrices = []
    for signal in derive_channels(clip).as_list():
        frames = frame_signal(signal, config)
        matrices.append(log_mel(power_spectrum(frames, window, config.fft_size), fb, config.log_floor))

    return np.stack(matrices).astype(np.float32)


def extract_clip(
    clip: AudioClip,
    config: FeatureConfig,
    filterbank: Optional[MelFilterbank] = None,
    source: Optional[str] = None
) -> list[LogMelTensor]:
    """Full front end from audio to float32 patches."""
    patches = extract_patches(list(clip_log_mel(clip, config, filterbank, source)), config.patch_frames, source=source)
    logger.debug(f"Extracted {len(patches)} patches from {source or 'clip'}")
    return patches


# ==================== NORMALIZATION ====================

ArrayOrTensor = Union[LogMelTensor, np.ndarray]


def _values(item: ArrayOrTensor) -> np.ndarray:
    return item.values if isinstance(item, LogMelTensor) else np.asarray(item)


def compute_norm_stats(training_patches: Sequence[ArrayOrTensor]) -> NormStats:
    """Mean and (population) std per (channel, mel-bin) pooled over all frames of all patches."""
    if len(training_patches) == 0:
        raise DataError("cannot compute normalization statistics from zero patches")
    stacked = np.stack([_values(p) for p in training_patches]).astype(np.float64)
    mean = stacked.mean(axis=(0, 3))
    std = np.sqrt(((stacked - mean[None, :, :, None]) ** 2).mean(axis=(0, 3)))
    return NormStats(mean=mean, std=np.maximum(std, STD_FLOOR))


def normalize_array(values: np.ndarray, stats: NormStats) -> np.ndarray:
    """Z-score [..., channels, n_mels, frames] arrays; keeps the input dtype."""
    values = np.asarray(values)
    if values.shape[-3:-1] != stats.mean.shape:
        raise ShapeError(f"patch shape {values.shape} does not match norm stats {stats.mean.shape}")
    out = (values - stats.mean[:, :, None]) / stats.std[:, :, None]
    return out.astype(values.dtype, copy=False)


def normalize(patch: LogMelTensor, stats: NormStats) -> LogMelTensor:
    return LogMelTensor(values=normalize_array(patch.values, stats), source=patch.source, index=patch.index)


def select_channels(values: np.ndarray, mode: ChannelMode) -> np.ndarray:
    """Keep the channels of `mode` along the channel axis (third from last)."""
    if mode.kind == "multi":
        return values
    return values[..., list(mode.indices), :, :]
