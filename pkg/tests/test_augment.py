"""
Tests for mixup: endpoints, convexity, label simplex and stream determinism
"""

import numpy as np
import pytest

from src.augment import (
    LabeledExample,
    MixupMode,
    MixupPolicy,
    mixup_arrays,
    mixup_batch,
    mixup_pair,
    sample_alpha,
)
from src.errors import ConfigError, ShapeError
from src.features import LogMelTensor

N_CASES = 1000


def _example(rng, shape=(3, 4, 5), n_classes=15) -> LabeledExample:
    label = rng.dirichlet(np.ones(n_classes))
    return LabeledExample(LogMelTensor(rng.standard_normal(shape)), label)


class TestMixupPair:
    def test_endpoints(self, rng):
        for _ in range(N_CASES):
            a, b = _example(rng), _example(rng)
            np.testing.assert_array_equal(mixup_pair(a, b, 1.0).features.values, a.features.values)
            np.testing.assert_array_equal(mixup_pair(a, b, 0.0).label, b.label)

    def test_self_mix_is_identity(self, rng):
        for _ in range(N_CASES):
            a = _example(rng)
            mixed = mixup_pair(a, a, float(rng.uniform()))
            np.testing.assert_allclose(mixed.features.values, a.features.values, rtol=1e-12, atol=1e-12)
            np.testing.assert_allclose(mixed.label, a.label, rtol=1e-12, atol=1e-15)

    def test_convex_bounds_and_label_simplex(self, rng):
        for _ in range(N_CASES):
            a, b = _example(rng), _example(rng)
            mixed = mixup_pair(a, b, float(rng.uniform()))
            low = np.minimum(a.features.values, b.features.values)
            high = np.maximum(a.features.values, b.features.values)
            assert np.all(mixed.features.values >= low - 1e-12)
            assert np.all(mixed.features.values <= high + 1e-12)
            assert np.all(mixed.label >= 0.0)
            assert abs(mixed.label.sum() - 1.0) <= 1e-12

    def test_endpoint_results_are_copies(self, rng):
        a, b = _example(rng), _example(rng)
        mixed = mixup_pair(a, b, 1.0)
        mixed.features.values[...] = 0.0
        assert np.any(a.features.values != 0.0)

    def test_invalid_alpha(self, rng):
        with pytest.raises(ConfigError):
            mixup_pair(_example(rng), _example(rng), 1.5)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeError):
            mixup_pair(_example(rng), _example(rng, shape=(3, 4, 6)), 0.5)

    def test_label_must_be_a_distribution(self, rng):
        with pytest.raises(ShapeError):
            LabeledExample(LogMelTensor(rng.standard_normal((3, 4, 5))), np.full(15, 0.5))


class TestMixupPolicy:
    def test_validation(self):
        with pytest.raises(ConfigError):
            MixupPolicy(MixupMode.FIXED, alpha=1.2)
        with pytest.raises(ConfigError):
            MixupPolicy(MixupMode.BETA, beta_param=0.0)
        with pytest.raises(ConfigError):
            MixupPolicy.from_dict({"mode": "sometimes"})

    def test_identity_policies(self):
        assert MixupPolicy().is_identity
        assert MixupPolicy(MixupMode.FIXED, alpha=0.0).is_identity
        assert MixupPolicy(MixupMode.FIXED, alpha=1.0).is_identity
        assert not MixupPolicy(MixupMode.FIXED, alpha=0.2).is_identity
        assert not MixupPolicy(MixupMode.BETA).is_identity

    def test_ratio_keys(self):
        assert MixupPolicy().ratio_key == "0"
        assert MixupPolicy(MixupMode.FIXED, alpha=0.2).ratio_key == "0.2"
        assert MixupPolicy(MixupMode.BETA, beta_param=0.4).ratio_key == "beta(0.4)"

    def test_beta_alpha_in_unit_interval(self, rng):
        policy = MixupPolicy(MixupMode.BETA, beta_param=0.2)
        draws = [sample_alpha(policy, rng) for _ in range(N_CASES)]
        assert all(0.0 <= a <= 1.0 for a in draws)


class TestMixupBatch:
    def test_off_returns_batch_and_leaves_stream(self, rng):
        batch = [_example(rng) for _ in range(4)]
        stream = np.random.default_rng(3)
        before = stream.bit_generator.state

        out = mixup_batch(batch, MixupPolicy(), stream)

        assert all(x is y for x, y in zip(out, batch))
        assert stream.bit_generator.state == before

    def test_same_seed_same_batch(self, rng):
        batch = [_example(rng) for _ in range(6)]
        policy = MixupPolicy(MixupMode.BETA, beta_param=0.2)
        first = mixup_batch(batch, policy, np.random.default_rng(11))
        second = mixup_batch(batch, policy, np.random.default_rng(11))
        for x, y in zip(first, second):
            np.testing.assert_array_equal(x.features.values, y.features.values)
            np.testing.assert_array_equal(x.label, y.label)

    def test_labels_stay_on_simplex(self, rng):
        policy = MixupPolicy(MixupMode.FIXED, alpha=0.3)
        for _ in range(100):
            batch = [_example(rng) for _ in range(4)]
            for example in mixup_batch(batch, policy, rng):
                assert abs(example.label.sum() - 1.0) <= 1e-12

    def test_array_form_matches_example_form(self, rng):
        batch = [_example(rng) for _ in range(5)]
        features = np.stack([e.features.values for e in batch])
        labels = np.stack([e.label for e in batch])
        policy = MixupPolicy(MixupMode.FIXED, alpha=0.7)

        mixed = mixup_batch(batch, policy, np.random.default_rng(5))
        x, y = mixup_arrays(features, labels, policy, np.random.default_rng(5))

        np.testing.assert_allclose(x, np.stack([e.features.values for e in mixed]))
        np.testing.assert_allclose(y, np.stack([e.label for e in mixed]))

    def test_empty_batch(self, rng):
        with pytest.raises(ShapeError):
            mixup_batch([], MixupPolicy(MixupMode.FIXED, alpha=0.5), rng)
