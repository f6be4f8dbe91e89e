import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from satalign.augment import (augment_geometric, augment_photometric, crop_pixels,
                              fit_to_input, flip_pixels, resize_pixels)
from satalign.geodata import TileRecord


def tile(seed=0, c=3, h=12, w=12):
    rng = np.random.default_rng(seed)
    return TileRecord(tile_id=7, lat=1.0, lon=2.0, timestamp=5,
                      pixels=rng.random((c, h, w)))


class TestFlips:
    def test_horizontal_flip_is_involution(self):
        px = tile().pixels
        np.testing.assert_array_equal(flip_pixels(flip_pixels(px, True, False), True, False), px)

    def test_vertical_flip_is_involution(self):
        px = tile().pixels
        np.testing.assert_array_equal(flip_pixels(flip_pixels(px, False, True), False, True), px)

    def test_flips_preserve_pixel_multiset(self):
        px = tile(seed=4).pixels
        for hor in (False, True):
            for ver in (False, True):
                flipped = flip_pixels(px, hor, ver)
                np.testing.assert_array_equal(np.sort(flipped.ravel()), np.sort(px.ravel()))


class TestGeometric:
    def test_full_size_crop_is_identity_up_to_flips(self):
        t = tile(h=8, w=8)
        out = augment_geometric(t, crop_size=8, seed=11)
        candidates = [flip_pixels(t.pixels, h, v) for h in (False, True) for v in (False, True)]
        assert any(np.array_equal(out.pixels, cand) for cand in candidates)

    def test_output_dims_match_requested_input_size(self):
        t = tile(h=16, w=16)
        for out_size in (8, 12, 16, 20):
            out = augment_geometric(t, crop_size=10, seed=0, out_size=out_size)
            assert out.pixels.shape == (3, out_size, out_size)

    def test_crop_too_large_rejected(self):
        with pytest.raises(ValueError, match="crop size"):
            augment_geometric(tile(h=8, w=8), crop_size=9, seed=0)

    def test_deterministic_given_seed(self):
        t = tile(seed=2)
        a = augment_geometric(t, crop_size=8, seed=42, out_size=12)
        b = augment_geometric(t, crop_size=8, seed=42, out_size=12)
        np.testing.assert_array_equal(a.pixels, b.pixels)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=40, deadline=None)
    def test_values_stay_in_unit_interval(self, seed):
        out = augment_geometric(tile(seed=seed % 17), crop_size=9, seed=seed, out_size=14)
        assert out.pixels.min() >= 0.0 and out.pixels.max() <= 1.0

    def test_metadata_preserved(self):
        out = augment_geometric(tile(), crop_size=8, seed=0)
        assert (out.tile_id, out.lat, out.lon, out.timestamp) == (7, 1.0, 2.0, 5)


class TestPhotometric:
    def test_zero_jitter_zero_mix_is_identity(self):
        t = tile(seed=3)
        out = augment_photometric(t, jitter=0.0, mix_strength=0.0, seed=99)
        np.testing.assert_array_equal(out.pixels, t.pixels)

    def test_identity_mixing_matrix_leaves_pixels(self):
        # mix_strength 0 forces the mixing matrix to the identity
        t = tile(seed=5)
        out = augment_photometric(t, jitter=0.0, mix_strength=0.0, seed=1)
        np.testing.assert_array_equal(out.pixels, t.pixels)

    @given(st.integers(0, 2**31 - 1), st.floats(0.0, 0.5), st.floats(0.0, 0.3))
    @settings(max_examples=60, deadline=None)
    def test_outputs_always_clamped(self, seed, jitter, mix):
        out = augment_photometric(tile(seed=seed % 13), jitter=jitter,
                                  mix_strength=mix, seed=seed)
        assert out.pixels.min() >= 0.0 and out.pixels.max() <= 1.0

    def test_negative_scales_rejected(self):
        with pytest.raises(ValueError, match=">= 0"):
            augment_photometric(tile(), jitter=-0.1, mix_strength=0.0, seed=0)


class TestResize:
    def test_identity_when_same_size(self):
        px = tile().pixels
        np.testing.assert_array_equal(resize_pixels(px, 12, 12), px)

    def test_constant_image_stays_constant(self):
        px = np.full((3, 6, 6), 0.4)
        np.testing.assert_allclose(resize_pixels(px, 10, 10), 0.4, atol=1e-12)

    def test_endpoints_preserved(self):
        px = np.zeros((1, 4, 4))
        px[0, 0, 0] = 1.0
        px[0, -1, -1] = 0.5
        out = resize_pixels(px, 9, 9)
        assert out[0, 0, 0] == pytest.approx(1.0)
        assert out[0, -1, -1] == pytest.approx(0.5)

    def test_crop_bounds_checked(self):
        with pytest.raises(ValueError, match="outside tile"):
            crop_pixels(tile().pixels, top=8, left=0, size=8)

    def test_fit_to_input(self):
        out = fit_to_input(tile(h=20, w=20), 12)
        assert out.pixels.shape == (3, 12, 12)
