import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oddsift.augment import (
    AugmentOp,
    OP_KINDS,
    RandAugmentPolicy,
    apply_op,
    posterize,
    smooth3,
    solarize,
    strong_augment,
    weak_augment,
)
from oddsift.errors import ConfigError


class TestWeak:
    def test_identity_when_forced(self, rng):
        # rng stream: first draw < 0.5 flips; craft a generator where the
        # flip coin is >= 0.5 and both crop offsets equal the pad (centre).
        class Fixed:
            def random(self):
                return 0.9  # no flip

            def integers(self, lo, hi):
                return 4  # centre crop offset == pad

        x = np.random.default_rng(0).random((1, 6, 6)).astype(np.float32)
        out = weak_augment(x, Fixed())
        np.testing.assert_array_equal(out, x)

    def test_forced_flip_mirror(self):
        class Fixed:
            def random(self):
                return 0.1  # flip

            def integers(self, lo, hi):
                return 4

        x = np.array([[[1.0, 0.0], [1.0, 0.0]]], dtype=np.float32)
        out = weak_augment(x, Fixed())
        np.testing.assert_array_equal(out, [[[0.0, 1.0], [0.0, 1.0]]])

    def test_flip_frequency(self):
        # 10,000 seeded draws: flip frequency 0.5 +/- 0.02
        rng = np.random.default_rng(7)
        x = np.zeros((1, 8, 8), dtype=np.float32)
        x[0, 0, 0] = 1.0
        flips = 0
        for _ in range(10_000):
            out = weak_augment(x, rng, pad=0)
            flips += out[0, 0, -1] == 1.0
        assert abs(flips / 10_000 - 0.5) < 0.02

    def test_shape_preserved(self, rng):
        x = rng.random((3, 13, 9)).astype(np.float32)
        assert weak_augment(x, rng).shape == x.shape


class TestOps:
    def test_zero_magnitude_identity_all_ops(self, rng):
        x = rng.random((1, 12, 12)).astype(np.float32)
        for kind in OP_KINDS:
            for direction in (1, -1):
                out = apply_op(x, AugmentOp(kind, 0.0, direction))
                assert np.abs(out - x).max() < 1e-6, kind

    def test_solarize_definition(self):
        # threshold 0.5 (magnitude 0.5): 0.75 -> 0.25; 0.25 unchanged
        x = np.array([[[0.75, 0.25]]], dtype=np.float32)
        out = apply_op(x, AugmentOp("solarize", 0.5))
        np.testing.assert_allclose(out, [[[0.25, 0.25]]], atol=1e-6)

    def test_solarize_primitive(self):
        x = np.array([[[0.5, 0.49, 1.0]]], dtype=np.float32)
        np.testing.assert_allclose(solarize(x, 0.5), [[[0.5, 0.49, 0.0]]], atol=1e-7)

    def test_posterize_one_bit(self):
        # floor(v*2)/2 quantisation oracle
        x = np.array([[[0.1, 0.9]]], dtype=np.float32)
        np.testing.assert_allclose(posterize(x, 1), [[[0.0, 0.5]]], atol=1e-7)

    def test_posterize_magnitude_full(self, rng):
        # magnitude 1 -> 4 bits; matches the quantisation oracle
        x = rng.random((1, 8, 8)).astype(np.float32)
        out = apply_op(x, AugmentOp("posterize", 1.0))
        np.testing.assert_allclose(out, np.minimum(np.floor(x * 16) / 16, 1.0), atol=1e-7)

    def test_translate_x_one_pixel(self):
        # 2x2 can't express a 1px shift with 30% max translation; use a
        # wider raster where magnitude 1 shifts by round(0.3 * w) pixels.
        x = np.arange(16, dtype=np.float32).reshape(1, 4, 4) / 16.0
        out = apply_op(x, AugmentOp("translate-x", 1.0, 1))
        shift = round(0.3 * 4)  # 1 pixel
        assert shift == 1
        np.testing.assert_allclose(out[0, :, 0], 0.0)  # fill column
        np.testing.assert_allclose(out[0, :, 1:], x[0, :, :-1], atol=1e-6)

    def test_translate_y_direction(self):
        x = np.arange(16, dtype=np.float32).reshape(1, 4, 4) / 16.0
        out = apply_op(x, AugmentOp("translate-y", 1.0, -1))
        np.testing.assert_allclose(out[0, -1, :], 0.0)
        np.testing.assert_allclose(out[0, :-1, :], x[0, 1:, :], atol=1e-6)

    def test_brightness_factor(self):
        x = np.full((1, 4, 4), 0.4, dtype=np.float32)
        out = apply_op(x, AugmentOp("brightness", 1.0, 1))  # factor 1.95
        np.testing.assert_allclose(out, np.clip(1.95 * 0.4, 0, 1), atol=1e-6)
        out = apply_op(x, AugmentOp("brightness", 1.0, -1))  # factor 0.05
        np.testing.assert_allclose(out, 0.05 * 0.4, atol=1e-6)

    def test_contrast_preserves_mean(self, rng):
        x = rng.random((1, 8, 8)).astype(np.float32) * 0.5 + 0.25
        out = apply_op(x, AugmentOp("contrast", 0.5, -1))
        assert abs(out.mean() - x.mean()) < 1e-3

    def test_sharpness_blend(self, rng):
        x = rng.random((1, 8, 8)).astype(np.float32)
        out = apply_op(x, AugmentOp("sharpness", 1.0, -1))  # factor 0.05: nearly smoothed
        expected = np.clip(smooth3(x) + 0.05 * (x - smooth3(x)), 0, 1)
        np.testing.assert_allclose(out, expected, atol=1e-6)

    def test_rotate_90ish_moves_mass(self, rng):
        x = np.zeros((1, 9, 9), dtype=np.float32)
        x[0, 0, :] = 1.0
        out = apply_op(x, AugmentOp("rotate", 1.0, 1))
        assert out.shape == x.shape
        assert not np.allclose(out, x)

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            AugmentOp("cutout", 0.5)


@settings(max_examples=120, deadline=None)
@given(
    kind=st.sampled_from(OP_KINDS),
    magnitude=st.floats(0.0, 1.0),
    direction=st.sampled_from([1, -1]),
    h=st.integers(4, 16),
    w=st.integers(4, 16),
    channels=st.sampled_from([1, 3]),
    seed=st.integers(0, 2**16),
)
def test_shape_and_range_preserved(kind, magnitude, direction, h, w, channels, seed):
    x = np.random.default_rng(seed).random((channels, h, w)).astype(np.float32)
    out = apply_op(x, AugmentOp(kind, magnitude, direction))
    assert out.shape == x.shape
    assert out.min() >= 0.0 and out.max() <= 1.0 + 1e-6


class TestStrong:
    def test_zero_level_policy_identity(self, rng):
        x = rng.random((1, 10, 10)).astype(np.float32)
        policy = RandAugmentPolicy(n_ops=2, magnitude=0)
        out = strong_augment(x, policy, rng)
        assert np.abs(out - x).max() < 1e-6

    def test_seed_determinism(self, rng):
        x = rng.random((3, 12, 12)).astype(np.float32)
        policy = RandAugmentPolicy()
        a = strong_augment(x, policy, np.random.default_rng(123))
        b = strong_augment(x, policy, np.random.default_rng(123))
        np.testing.assert_array_equal(a, b)

    def test_distinct_ops_sampled(self):
        # with n_ops == pool size every op is used exactly once
        policy = RandAugmentPolicy(n_ops=len(RandAugmentPolicy().ops), magnitude=10)
        x = np.random.default_rng(5).random((1, 12, 12)).astype(np.float32)
        out = strong_augment(x, policy, np.random.default_rng(5))
        assert out.shape == x.shape

    def test_policy_validation(self):
        with pytest.raises(ConfigError):
            RandAugmentPolicy(n_ops=0)
        with pytest.raises(ConfigError):
            RandAugmentPolicy(magnitude=31)
        with pytest.raises(ConfigError):
            RandAugmentPolicy(ops=("rotate", "mystery"))
