import math

import numpy as np
import pytest
from hypothesis import given

from maskinject.geometry import (
    bandwidth,
    euclidean_distance_transform,
    medial_skeleton,
    skeleton_distance_field,
)
from maskinject.masks import BinaryMask, upsample_mask
from maskinject.oracles import (
    oracle_edt_squared,
    oracle_ridge_skeleton,
    oracle_skeleton_distance_squared,
)

from conftest import nonempty_mask_arrays


class TestEuclideanDistanceTransform:
    def test_all_reference_is_zero_field(self):
        field = euclidean_distance_transform(BinaryMask.full(4, 4), "set-pixels")
        assert np.array_equal(field.values, np.zeros((4, 4)))

    def test_single_reference_corner(self):
        bits = np.zeros((3, 3), dtype=bool)
        bits[0, 0] = True
        field = euclidean_distance_transform(BinaryMask(bits), "set-pixels")
        assert field.values[2, 2] == pytest.approx(math.sqrt(8))

    def test_no_reference_raises(self):
        with pytest.raises(ValueError):
            euclidean_distance_transform(BinaryMask.empty(3, 3), "set-pixels")
        with pytest.raises(ValueError):
            euclidean_distance_transform(BinaryMask.full(3, 3), "unset-pixels")

    def test_unset_reference(self):
        bits = np.ones((1, 3), dtype=bool)
        bits[0, 2] = False
        field = euclidean_distance_transform(BinaryMask(bits), "unset-pixels", squared=True)
        assert list(field.values[0]) == [4, 1, 0]

    def test_squared_values_are_integers(self, rng):
        bits = rng.random((20, 17)) < 0.3
        bits[4, 5] = True
        field = euclidean_distance_transform(BinaryMask(bits), "set-pixels", squared=True)
        assert np.array_equal(field.values, np.round(field.values))

    def test_exact_against_brute_force(self, rng):
        for _ in range(30):
            h, w = rng.integers(2, 64, size=2)
            bits = rng.random((h, w)) < float(rng.uniform(0.05, 0.8))
            if not bits.any():
                bits[0, 0] = True
            got = euclidean_distance_transform(BinaryMask(bits), "set-pixels", squared=True)
            want = oracle_edt_squared(bits)
            assert np.array_equal(got.values, want.astype(float))

    @given(nonempty_mask_arrays())
    def test_exact_on_small_masks(self, bits):
        got = euclidean_distance_transform(BinaryMask(bits), "set-pixels", squared=True)
        assert np.array_equal(got.values, oracle_edt_squared(bits).astype(float))


class TestMedialSkeleton:
    def test_single_pixel(self):
        bits = np.zeros((5, 5), dtype=bool)
        bits[2, 3] = True
        sk = medial_skeleton(BinaryMask(bits))
        assert np.array_equal(sk.bits, bits)

    def test_one_wide_line_is_its_own_skeleton(self):
        bits = np.zeros((5, 7), dtype=bool)
        bits[2, 1:6] = True
        sk = medial_skeleton(BinaryMask(bits))
        assert np.array_equal(sk.bits, bits)

    def test_empty_mask_raises(self):
        with pytest.raises(ValueError):
            medial_skeleton(BinaryMask.empty(4, 4))

    def test_filled_square_matches_ridge_oracle(self):
        bits = np.zeros((9, 9), dtype=bool)
        bits[2:7, 2:7] = True
        sk = medial_skeleton(BinaryMask(bits))
        assert np.array_equal(sk.bits, oracle_ridge_skeleton(bits))

    @given(nonempty_mask_arrays(max_side=10))
    def test_skeleton_subset_and_nonempty(self, bits):
        sk = medial_skeleton(BinaryMask(bits))
        assert sk.area > 0
        assert np.array_equal(sk.bits & bits, sk.bits)
        assert np.array_equal(sk.bits, oracle_ridge_skeleton(bits))


class TestSkeletonDistanceField:
    def test_single_pixel_mask(self):
        bits = np.zeros((4, 4), dtype=bool)
        bits[1, 1] = True
        field = skeleton_distance_field(BinaryMask(bits))
        assert field.values[1, 1] == 0.0
        assert not field.defined[0, 0]
        assert np.isinf(field.values[0, 0])

    def test_line_mask_zero_on_mask(self):
        bits = np.zeros((3, 6), dtype=bool)
        bits[1, :] = True
        field = skeleton_distance_field(BinaryMask(bits))
        assert np.all(field.values[bits] == 0.0)

    def test_rectangle_matches_brute_force(self):
        bits = np.zeros((5, 9), dtype=bool)
        bits[1:4, 1:8] = True
        got = skeleton_distance_field(BinaryMask(bits), squared=True)
        want = oracle_skeleton_distance_squared(bits)
        assert np.array_equal(got.values[bits], want[bits])
        assert np.all(np.isinf(got.values[~bits]))

    @given(nonempty_mask_arrays(max_side=10))
    def test_zero_exactly_on_skeleton(self, bits):
        field = skeleton_distance_field(BinaryMask(bits))
        sk = medial_skeleton(BinaryMask(bits))
        on_mask = field.values[bits]
        assert np.all(on_mask[sk.bits[bits]] == 0.0)
        assert np.all(on_mask[~sk.bits[bits]] > 0.0)


class TestBandwidth:
    def test_single_pixel_is_zero(self):
        bits = np.zeros((3, 3), dtype=bool)
        bits[1, 1] = True
        assert bandwidth(BinaryMask(bits)) == 0.0

    def test_one_wide_line_is_zero(self):
        bits = np.zeros((4, 6), dtype=bool)
        bits[2, 1:5] = True
        assert bandwidth(BinaryMask(bits)) == 0.0

    def test_filled_square_matches_oracle(self):
        bits = np.zeros((11, 11), dtype=bool)
        bits[1:10, 1:10] = True
        want = math.sqrt(oracle_skeleton_distance_squared(bits)[bits].max()) / 3.0
        assert bandwidth(BinaryMask(bits)) == pytest.approx(want, abs=0)

    def test_translation_invariance(self):
        base = np.zeros((16, 16), dtype=bool)
        base[2:7, 3:9] = True
        shifted = np.zeros((16, 16), dtype=bool)
        shifted[6:11, 5:11] = True
        assert bandwidth(BinaryMask(base)) == bandwidth(BinaryMask(shifted))

    def test_scales_with_upsampling_within_tolerance(self):
        bits = np.zeros((12, 12), dtype=bool)
        bits[2:9, 3:10] = True
        small = bandwidth(BinaryMask(bits))
        big = bandwidth(upsample_mask(BinaryMask(bits), 2))
        assert big / small == pytest.approx(2.0, rel=0.05)
