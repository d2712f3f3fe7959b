"""
Tests for WAV decoding/encoding, scene classes and synthetic scenes
"""

import struct

import numpy as np
import pytest

from src.audio_io import (
    N_CLASSES,
    SCENE_CLASSES,
    AudioClip,
    encode_wav,
    read_wav,
    scene_by_id,
    scene_by_name,
    synthesize_scene,
    write_wav,
)
from src.errors import DataError, DecodeError, ShapeError, TruncationError, UnsupportedFormatError


def _float_wav(samples: np.ndarray, sample_rate: int = 8000) -> bytes:
    """Mono IEEE-float WAV bytes."""
    payload = np.asarray(samples, dtype="<f4").tobytes()
    return struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, 3, 1, sample_rate, sample_rate * 4, 4, 32,
        b"data", len(payload),
    ) + payload


class TestSceneClasses:
    def test_fifteen_classes_with_fixed_ids(self):
        assert N_CLASSES == 15
        assert [s.id for s in SCENE_CLASSES] == list(range(15))
        assert scene_by_id(10).name == "office"

    def test_lookup_by_name_and_alias(self):
        assert scene_by_name("Office").id == 10
        assert scene_by_name("lakeside beach").name == "beach"
        assert scene_by_name("cafe/restaurant").slug == "cafe_restaurant"

    def test_unknown_name_and_id(self):
        with pytest.raises(DataError):
            scene_by_name("spaceship")
        with pytest.raises(DataError):
            scene_by_id(15)


class TestAudioClip:
    def test_rejects_out_of_range_samples(self):
        with pytest.raises(DataError):
            AudioClip(samples=np.array([[0.0, 1.5]]), sample_rate=8000)

    def test_rejects_three_channels(self):
        with pytest.raises(ShapeError):
            AudioClip(samples=np.zeros((3, 10)), sample_rate=8000)

    def test_duration(self):
        clip = AudioClip(samples=np.zeros((2, 4000)), sample_rate=8000)
        assert clip.channel_count == 2
        assert clip.duration_s == pytest.approx(0.5)


class TestWavRoundTrip:
    @pytest.mark.parametrize("bit_depth", [16, 24])
    def test_within_one_lsb(self, tmp_path, rng, bit_depth):
        samples = rng.uniform(-1.0, 1.0, size=(2, 1001))
        samples[0, 0], samples[1, 0] = 1.0, -1.0
        clip = AudioClip(samples=samples, sample_rate=44100)

        path = tmp_path / "clip.wav"
        write_wav(clip, path, bit_depth=bit_depth)
        decoded = read_wav(path)

        assert decoded.sample_rate == 44100
        assert decoded.samples.shape == (2, 1001)
        lsb = 1.0 / 2 ** (bit_depth - 1)
        assert np.max(np.abs(decoded.samples - samples)) <= lsb + 1e-12

    def test_encoding_is_deterministic(self, rng):
        clip = AudioClip(samples=rng.uniform(-1, 1, size=(2, 300)), sample_rate=8000)
        assert encode_wav(clip) == encode_wav(clip)

    def test_odd_payload_is_padded(self, tmp_path):
        clip = AudioClip(samples=np.array([[0.1, -0.2, 0.3]]), sample_rate=8000)
        data = encode_wav(clip, bit_depth=24)
        assert len(data) % 2 == 0

        path = tmp_path / "odd.wav"
        path.write_bytes(data)
        decoded = read_wav(path)
        np.testing.assert_allclose(decoded.samples[0], [0.1, -0.2, 0.3], atol=2.0 ** -23)

    @pytest.mark.parametrize("bit_depth, n_samples", [(24, 3), (24, 4), (16, 3)])
    def test_riff_size_counts_the_whole_file(self, bit_depth, n_samples):
        clip = AudioClip(samples=np.zeros((1, n_samples)), sample_rate=8000)
        data = encode_wav(clip, bit_depth=bit_depth)
        riff_size, = struct.unpack_from("<I", data, 4)
        data_size, = struct.unpack_from("<I", data, 40)
        assert riff_size == len(data) - 8
        assert data_size == n_samples * bit_depth // 8

    def test_unsupported_bit_depth_on_write(self):
        clip = AudioClip(samples=np.zeros((1, 4)), sample_rate=8000)
        with pytest.raises(UnsupportedFormatError):
            encode_wav(clip, bit_depth=8)


class TestWavDecoding:
    def test_mono_is_duplicated(self, tmp_path):
        clip = AudioClip(samples=np.array([[0.25, -0.5, 0.75]]), sample_rate=8000)
        path = tmp_path / "mono.wav"
        write_wav(clip, path)

        decoded = read_wav(path)
        assert decoded.channel_count == 2
        np.testing.assert_array_equal(decoded.samples[0], decoded.samples[1])

    def test_unknown_chunk_is_skipped(self, tmp_path):
        clip = AudioClip(samples=np.array([[0.25, -0.5, 0.75, 0.0]]), sample_rate=8000)
        data = encode_wav(clip)
        # RIFF header (12) + fmt chunk (24), then an odd-sized LIST chunk and its pad byte
        extra = b"LIST" + struct.pack("<I", 5) + b"abcde" + b"\x00"
        path = tmp_path / "list.wav"
        path.write_bytes(data[:36] + extra + data[36:])

        decoded = read_wav(path)
        np.testing.assert_allclose(decoded.samples[0], [0.25, -0.5, 0.75, 0.0], atol=1.0 / 32768)

    def test_truncated_data_chunk(self, tmp_path):
        clip = AudioClip(samples=np.zeros((2, 100)), sample_rate=8000)
        path = tmp_path / "short.wav"
        path.write_bytes(encode_wav(clip)[:-10])

        with pytest.raises(TruncationError) as info:
            read_wav(path)
        assert info.value.expected == 400

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.wav"
        path.write_bytes(b"RIFX" + b"\x00" * 40)
        with pytest.raises(DecodeError) as info:
            read_wav(path)
        assert info.value.chunk == "RIFF"

    def test_missing_fmt_chunk(self, tmp_path):
        path = tmp_path / "nofmt.wav"
        path.write_bytes(b"RIFF" + struct.pack("<I", 12) + b"WAVE" + b"data" + struct.pack("<I", 0))
        with pytest.raises(DecodeError):
            read_wav(path)

    def test_eight_bit_is_unsupported(self, tmp_path):
        header = struct.pack(
            "<4sI4s4sIHHIIHH4sI",
            b"RIFF", 40, b"WAVE", b"fmt ", 16, 1, 1, 8000, 8000, 1, 8, b"data", 4,
        )
        path = tmp_path / "u8.wav"
        path.write_bytes(header + b"\x80\x80\x80\x80")
        with pytest.raises(UnsupportedFormatError):
            read_wav(path)

    def test_float_samples_are_clipped(self, tmp_path):
        path = tmp_path / "float.wav"
        path.write_bytes(_float_wav([0.5, 1.5, -2.0]))
        decoded = read_wav(path)
        np.testing.assert_allclose(decoded.samples[0], [0.5, 1.0, -1.0])

    def test_float_nan_is_rejected(self, tmp_path):
        path = tmp_path / "nan.wav"
        path.write_bytes(_float_wav([0.5, np.nan]))
        with pytest.raises(DecodeError):
            read_wav(path)


class TestSynthesizeScene:
    def test_deterministic(self):
        a = synthesize_scene(SCENE_CLASSES[3], seed=7, duration_s=0.5, sample_rate=8000)
        b = synthesize_scene(SCENE_CLASSES[3], seed=7, duration_s=0.5, sample_rate=8000)
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_shape_and_range(self):
        clip = synthesize_scene(SCENE_CLASSES[0], seed=1, duration_s=0.5, sample_rate=8000)
        assert clip.samples.shape == (2, 4000)
        assert np.max(np.abs(clip.samples)) <= 1.0

    def test_classes_differ(self):
        a = synthesize_scene(SCENE_CLASSES[0], seed=1, duration_s=0.5, sample_rate=8000)
        b = synthesize_scene(SCENE_CLASSES[1], seed=1, duration_s=0.5, sample_rate=8000)
        assert not np.allclose(a.samples, b.samples)

    def test_channels_differ(self):
        clip = synthesize_scene(SCENE_CLASSES[5], seed=3, duration_s=0.5, sample_rate=8000)
        assert not np.allclose(clip.samples[0], clip.samples[1])

    def test_nonpositive_duration(self):
        with pytest.raises(DataError):
            synthesize_scene(SCENE_CLASSES[0], seed=0, duration_s=0.0)
