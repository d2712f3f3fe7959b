"""
Tests for framing, the mel filterbank, log-mel patches and normalization
"""

import numpy as np
import pytest

from src.audio_io import AudioClip
from src.errors import ConfigError, DataError, ResolutionError, ShapeError, TooShortError
from src.features import (
    STD_FLOOR,
    ChannelMode,
    FeatureConfig,
    LogMelTensor,
    clip_log_mel,
    compute_norm_stats,
    derive_channels,
    extract_clip,
    extract_patches,
    frame_signal,
    hann_window,
    hz_to_mel,
    log_mel,
    mel_filterbank,
    mel_to_hz,
    normalize,
    power_spectrum,
    select_channels,
)


class TestFeatureConfig:
    def test_defaults_resolve(self):
        config = FeatureConfig()
        assert config.window_length == 1102
        assert config.hop_length == 1102
        assert config.fft_size == 2048
        assert config.fmax == 22050.0

    def test_fingerprint_follows_every_field(self):
        base = FeatureConfig()
        assert base.fingerprint() == FeatureConfig().fingerprint()
        assert base.fingerprint() != FeatureConfig(n_mels=64).fingerprint()
        assert base.fingerprint() != FeatureConfig(log_floor=1e-8).fingerprint()

    def test_invalid_values(self):
        with pytest.raises(ConfigError):
            FeatureConfig(fft_size=1000)
        with pytest.raises(ConfigError):
            FeatureConfig(fft_size=512)  # shorter than the 1102-sample window
        with pytest.raises(ConfigError):
            FeatureConfig(fmin=3000.0, fmax=2000.0)

    def test_from_dict_rejects_unknown_keys(self):
        with pytest.raises(ConfigError):
            FeatureConfig.from_dict({"n_mels": 64, "hop": 0.01})


class TestFraming:
    def test_thirty_second_clip_yields_nine_patches_of_frames(self):
        config = FeatureConfig()
        frames = frame_signal(np.zeros(30 * 44100), config)
        assert frames.shape == (1200, 1102)
        assert frames.shape[0] // config.patch_frames == 9

    def test_trailing_samples_are_dropped(self, small_features):
        frames = frame_signal(np.arange(256 * 3 + 100, dtype=float), small_features)
        assert frames.shape == (3, 256)
        np.testing.assert_array_equal(frames[2], np.arange(512, 768))

    def test_too_short(self, small_features):
        with pytest.raises(TooShortError):
            frame_signal(np.zeros(100), small_features)

    def test_hann_window_is_periodic(self):
        w = hann_window(8)
        assert w[0] == 0.0
        assert w[4] == pytest.approx(1.0)
        np.testing.assert_allclose(w[1:4], w[7:4:-1])

    def test_power_spectrum_of_silence(self, small_features):
        frames = np.zeros((2, 256))
        power = power_spectrum(frames, hann_window(256), small_features.fft_size)
        assert power.shape == (2, 129)
        assert np.all(power == 0.0)


class TestMelFilterbank:
    def test_mel_scale(self):
        assert float(hz_to_mel(700.0)) == pytest.approx(2595.0 * np.log10(2.0), abs=1e-9)
        assert float(mel_to_hz(hz_to_mel(1234.5))) == pytest.approx(1234.5)

    def _check(self, config):
        weights = mel_filterbank(config).weights
        assert weights.shape == (config.n_mels, config.fft_size // 2 + 1)
        assert np.all(weights >= 0.0)
        np.testing.assert_allclose(weights.max(axis=1), 1.0)
        for row in weights:
            peak = int(np.argmax(row))
            assert np.all(np.diff(row[:peak + 1]) >= 0)
            assert np.all(np.diff(row[peak:]) <= 0)

    def test_default_filterbank(self):
        self._check(FeatureConfig())

    def test_random_configurations(self, rng):
        for _ in range(10):
            config = FeatureConfig(
                sample_rate=int(rng.choice([16000, 22050, 44100])),
                window_s=0.025,
                hop_s=0.0125,
                n_mels=int(rng.integers(10, 33)),
            )
            self._check(config)

    def test_resolution_error(self):
        config = FeatureConfig(sample_rate=8000, window_s=0.004, hop_s=0.004, n_mels=64)
        with pytest.raises(ResolutionError):
            mel_filterbank(config)

    def test_log_floor(self, small_features):
        fb = mel_filterbank(small_features)
        values = log_mel(np.zeros((3, 129)), fb, log_floor=1e-10)
        assert values.shape == (16, 3)
        np.testing.assert_allclose(values, np.log(1e-10))


class TestPatches:
    def test_patch_count_and_content(self, rng):
        channels = [rng.standard_normal((4, 300)) for _ in range(3)]
        patches = extract_patches(channels, patch_frames=128, source="x.wav")
        assert len(patches) == 2
        assert patches[1].shape == (3, 4, 128)
        assert patches[1].index == 1
        np.testing.assert_array_equal(patches[1].values[2], channels[2][:, 128:256])

    def test_spectrogram_shorter_than_patch(self, rng):
        with pytest.raises(TooShortError):
            extract_patches([rng.standard_normal((4, 10))] * 3, patch_frames=16)

    def test_mean_channel_is_mixdown(self, small_features, rng):
        left = 0.5 * np.sin(2 * np.pi * 440 * np.arange(8000) / 8000)
        right = 0.1 * rng.uniform(-1, 1, 8000)
        clip = AudioClip(samples=np.stack([left, right]), sample_rate=8000)

        values = clip_log_mel(clip, small_features)
        assert values.dtype == np.float32
        assert values.shape == (3, 16, 31)
        assert not np.allclose(values[0], values[1])

        fb = mel_filterbank(small_features)
        window = hann_window(256)
        mixdown = (left + right) / 2
        expected = log_mel(power_spectrum(frame_signal(mixdown, small_features), window, 256), fb)
        np.testing.assert_allclose(values[2], expected.astype(np.float32), rtol=1e-5, atol=1e-5)

    def test_mono_fills_all_channels(self, small_features, rng):
        clip = AudioClip(samples=rng.uniform(-0.5, 0.5, (1, 8000)), sample_rate=8000)
        channels = derive_channels(clip)
        np.testing.assert_array_equal(channels.left, channels.mean)
        values = clip_log_mel(clip, small_features)
        np.testing.assert_array_equal(values[0], values[1])
        np.testing.assert_array_equal(values[0], values[2])

    def test_sample_rate_mismatch(self, small_features):
        clip = AudioClip(samples=np.zeros((2, 16000)), sample_rate=16000)
        with pytest.raises(DataError):
            extract_clip(clip, small_features)


class TestNormalization:
    def test_training_patches_are_standardized(self, rng):
        patches = [rng.normal(5.0, 3.0, size=(3, 4, 16)) for _ in range(20)]
        stats = compute_norm_stats(patches)
        assert stats.mean.shape == (3, 4)

        normalized = np.stack([normalize(LogMelTensor(p), stats).values for p in patches])
        np.testing.assert_allclose(normalized.mean(axis=(0, 3)), 0.0, atol=1e-9)
        np.testing.assert_allclose(normalized.std(axis=(0, 3)), 1.0, atol=1e-9)

    def test_constant_bin_uses_floor(self):
        patches = [np.full((3, 2, 4), -23.0), np.full((3, 2, 4), -23.0)]
        stats = compute_norm_stats(patches)
        np.testing.assert_array_equal(stats.std, STD_FLOOR)
        assert np.all(np.isfinite(normalize(LogMelTensor(patches[0]), stats).values))

    def test_empty_training_set(self):
        with pytest.raises(DataError):
            compute_norm_stats([])

    def test_shape_mismatch(self, rng):
        stats = compute_norm_stats([rng.standard_normal((3, 4, 8))])
        with pytest.raises(ShapeError):
            normalize(LogMelTensor(rng.standard_normal((3, 5, 8))), stats)


class TestChannelMode:
    @pytest.mark.parametrize("text,expected", [
        ("multi", "multi"),
        ("single:left", "single:left"),
        ("single(right)", "single:right"),
        ("mean", "single:mean"),
    ])
    def test_parse(self, text, expected):
        assert str(ChannelMode.parse(text)) == expected

    def test_invalid(self):
        with pytest.raises(ConfigError):
            ChannelMode.parse("single:center")

    def test_select_single_channel(self, rng):
        batch = rng.standard_normal((5, 3, 4, 8))
        selected = select_channels(batch, ChannelMode.parse("single:right"))
        assert selected.shape == (5, 1, 4, 8)
        np.testing.assert_array_equal(selected[:, 0], batch[:, 1])
        assert select_channels(batch, ChannelMode()) is batch
