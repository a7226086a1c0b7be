import numpy as np
import pytest

from maskinject.gradcheck import gradcheck
from maskinject.inject import (
    FeatureMap,
    MaskEmbeddings,
    cross_attention,
    depthwise_conv,
    high_freq_inject,
    init_high_freq_params,
    intra_mask_context,
    low_freq_inject,
    mask_pool,
    mask_summary_stack,
    zero_mlp_high_freq_params,
)
from maskinject.masks import BinaryMask, MaskSet
from maskinject.oracles import (
    oracle_depthwise_conv3,
    oracle_low_freq_inject,
    oracle_mask_pool,
)

from conftest import make_set


def column_mask():
    bits = np.array([[True, False], [True, False]])
    return make_set([bits], 2, 2)


class TestMaskPool:
    def test_left_column_mean(self):
        f = FeatureMap(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
        emb = mask_pool(f, column_mask())
        assert emb.vectors[0, 0] == pytest.approx(2.0)

    def test_constant_map_pools_to_constant(self, rng):
        c = rng.normal(size=3)
        f = FeatureMap(np.broadcast_to(c[:, None, None], (3, 4, 4)).copy())
        masks = make_set([rng.random((4, 4)) < 0.5 for _ in range(2)], 4, 4)
        emb = mask_pool(f, masks)
        for k in range(2):
            if masks[k].area:
                np.testing.assert_allclose(emb.vectors[k], c)

    def test_single_cell_mask_returns_that_cell(self, rng):
        values = rng.normal(size=(4, 3, 3))
        bits = np.zeros((3, 3), dtype=bool)
        bits[1, 2] = True
        emb = mask_pool(FeatureMap(values), make_set([bits], 3, 3))
        np.testing.assert_allclose(emb.vectors[0], values[:, 1, 2])

    def test_empty_mask_flagged_and_zero(self):
        f = FeatureMap(np.ones((2, 3, 3)))
        emb = mask_pool(f, make_set([np.zeros((3, 3), dtype=bool)], 3, 3))
        assert emb.empty_rows == (0,)
        assert np.all(emb.vectors[0] == 0.0)

    def test_matches_summation_oracle(self, rng):
        values = rng.normal(size=(5, 6, 6))
        masks = [rng.random((6, 6)) < 0.4 for _ in range(3)]
        got = mask_pool(FeatureMap(values), make_set(masks, 6, 6))
        want = oracle_mask_pool(values, masks)
        np.testing.assert_allclose(got.vectors, want, atol=1e-12)

    def test_resolution_mismatch_raises(self):
        with pytest.raises(ValueError):
            mask_pool(FeatureMap(np.zeros((2, 3, 3))), make_set([np.zeros((4, 4), bool)], 4, 4))


class TestIntraMaskContext:
    def test_uncovered_cells_pass_through(self, rng):
        values = rng.normal(size=(3, 4, 4))
        bits = np.zeros((4, 4), dtype=bool)
        bits[0, :2] = True
        masks = make_set([bits], 4, 4)
        f = FeatureMap(values)
        out = intra_mask_context(f, masks, mask_pool(f, masks))
        np.testing.assert_array_equal(out.values[:, ~bits], values[:, ~bits])

    def test_zero_features_stay_zero(self):
        f = FeatureMap(np.zeros((2, 3, 3)))
        masks = make_set([np.ones((3, 3), dtype=bool)], 3, 3)
        out = intra_mask_context(f, masks, mask_pool(f, masks))
        assert np.all(out.values == 0.0)

    def test_hand_evaluated_two_by_two(self):
        f = FeatureMap(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
        masks = column_mask()
        out = intra_mask_context(f, masks, mask_pool(f, masks))
        np.testing.assert_allclose(out.values[0], [[3.0, 2.0], [5.0, 4.0]])

    def test_disjoint_masks_add_exactly_one_embedding(self, rng):
        values = rng.normal(size=(4, 4, 4))
        a = np.zeros((4, 4), dtype=bool)
        a[:2] = True
        masks = make_set([a, ~a], 4, 4)
        f = FeatureMap(values)
        emb = mask_pool(f, masks)
        out = intra_mask_context(f, masks, emb)
        np.testing.assert_allclose(
            out.values[:, a], values[:, a] + emb.vectors[0][:, None], atol=1e-12
        )


class TestCrossAttention:
    def test_single_embedding_returned_everywhere(self, rng):
        emb = MaskEmbeddings(rng.normal(size=(1, 4)))
        q = FeatureMap(rng.normal(size=(4, 3, 3)))
        out = cross_attention(q, emb)
        for y in range(3):
            for x in range(3):
                np.testing.assert_allclose(out.values[:, y, x], emb.vectors[0])

    def test_identical_embeddings_average_to_themselves(self, rng):
        v = rng.normal(size=4)
        emb = MaskEmbeddings(np.stack([v, v]))
        q = FeatureMap(rng.normal(size=(4, 2, 2)))
        out = cross_attention(q, emb)
        for y in range(2):
            for x in range(2):
                np.testing.assert_allclose(out.values[:, y, x], v)

    def test_zero_masks_warns_and_zeroes(self, rng):
        q = FeatureMap(rng.normal(size=(3, 2, 2)))
        with pytest.warns(UserWarning):
            out = cross_attention(q, MaskEmbeddings(np.zeros((0, 3))))
        assert np.all(out.values == 0.0)

    def test_dimension_mismatch_raises(self, rng):
        with pytest.raises(ValueError):
            cross_attention(FeatureMap(rng.normal(size=(3, 2, 2))),
                            MaskEmbeddings(rng.normal(size=(2, 4))))

    def test_output_in_convex_hull_of_embeddings(self, rng):
        emb = MaskEmbeddings(rng.normal(size=(5, 6)))
        q = FeatureMap(rng.normal(size=(6, 4, 4)))
        out = cross_attention(q, emb)
        lo = emb.vectors.min(axis=0)
        hi = emb.vectors.max(axis=0)
        tol = 1e-12
        for d in range(6):
            assert np.all(out.values[d] >= lo[d] - tol)
            assert np.all(out.values[d] <= hi[d] + tol)


class TestLowFreqInject:
    def test_no_masks_is_identity(self, rng):
        values = rng.normal(size=(3, 4, 4))
        out = low_freq_inject(FeatureMap(values), MaskSet(4, 4, ()))
        np.testing.assert_array_equal(out.values, values)

    def test_constant_map_full_mask_triples(self):
        c = np.array([0.5, -1.0])
        f = FeatureMap(np.broadcast_to(c[:, None, None], (2, 3, 3)).copy())
        masks = make_set([np.ones((3, 3), dtype=bool)], 3, 3)
        out = low_freq_inject(f, masks)
        np.testing.assert_allclose(out.values, 3.0 * f.values, atol=1e-12)

    def test_matches_dense_oracle(self, rng):
        for _ in range(10):
            values = rng.normal(size=(4, 5, 5))
            masks = [rng.random((5, 5)) < 0.45 for _ in range(3)]
            got = low_freq_inject(FeatureMap(values), make_set(masks, 5, 5))
            want = oracle_low_freq_inject(values, masks)
            np.testing.assert_allclose(got.values, want, atol=1e-12)

    def test_mask_order_does_not_matter(self, rng):
        values = rng.normal(size=(3, 5, 5))
        masks = [rng.random((5, 5)) < 0.4 for _ in range(4)]
        a = low_freq_inject(FeatureMap(values), make_set(masks, 5, 5))
        b = low_freq_inject(FeatureMap(values), make_set(masks[::-1], 5, 5))
        np.testing.assert_allclose(a.values, b.values, atol=1e-12)


class TestHighFreqInject:
    def make_instance(self, rng, d=4, h=5, w=5, n=2):
        params = init_high_freq_params(channels=d, class_cap=3, proj_hidden=4,
                                       proj_out=4, mlp_hidden=5, seed=7)
        f = FeatureMap(rng.normal(size=(d, h, w)))
        masks = make_set([rng.random((h, w)) < 0.4 for _ in range(n)], w, h)
        return f, masks, params

    def test_gamma_zero_is_identity(self, rng):
        f, masks, params = self.make_instance(rng)
        params.gamma[:] = 0.0
        out = high_freq_inject(f, masks, params)
        assert np.array_equal(out.values, f.values)

    def test_zero_mlp_is_identity(self, rng):
        f, masks, params = self.make_instance(rng)
        out = high_freq_inject(f, masks, zero_mlp_high_freq_params(params))
        assert np.array_equal(out.values, f.values)

    def test_shape_preserved(self, rng):
        f, masks, params = self.make_instance(rng, d=6, h=4, w=7)
        params = init_high_freq_params(channels=6, class_cap=3, seed=1)
        out = high_freq_inject(f, masks, params)
        assert out.values.shape == f.values.shape

    def test_channel_mismatch_raises(self, rng):
        f, masks, params = self.make_instance(rng)
        bad = init_high_freq_params(channels=9, seed=0)
        with pytest.raises(ValueError):
            high_freq_inject(f, masks, bad)

    def test_depthwise_conv_matches_oracle(self, rng):
        x = rng.normal(size=(3, 6, 7))
        kernel = rng.normal(size=(3, 3, 3))
        np.testing.assert_allclose(
            depthwise_conv(x, kernel), oracle_depthwise_conv3(x, kernel), atol=1e-12
        )

    def test_param_vector_round_trip(self, rng):
        _, _, params = self.make_instance(rng)
        back = params.from_vector(params.to_vector())
        for name, arr in params.blocks().items():
            assert np.array_equal(arr, getattr(back, name))


class TestMaskSummaryStack:
    def test_channel_count_independent_of_mask_count(self, rng):
        for n in (0, 1, 5):
            masks = make_set([rng.random((4, 4)) < 0.5 for _ in range(n)], 4, 4)
            stack = mask_summary_stack(masks, class_cap=4)
            assert stack.shape == (6, 4, 4)

    def test_coverage_counts(self):
        a = np.zeros((3, 3), dtype=bool)
        a[0] = True
        masks = make_set([a, a], 3, 3)
        stack = mask_summary_stack(masks)
        assert np.all(stack[0][0] == 2.0)
        assert np.all(stack[0][1:] == 0.0)

    def test_no_masks_boundary_channel_is_cap(self):
        stack = mask_summary_stack(MaskSet(3, 3, ()), boundary_cap=3.0)
        assert np.all(stack[1] == 3.0)

    def test_class_bits_respect_cap(self, rng):
        bits = np.ones((2, 2), dtype=bool)
        masks = make_set([bits, bits], 2, 2)
        stack = mask_summary_stack(masks, class_ids=[1, 7], class_cap=4)
        assert np.all(stack[2 + 1] == 1.0)
        assert stack.shape[0] == 6  # id 7 above the cap contributes no bit

    def test_untagged_masks_use_index(self):
        bits = np.ones((2, 2), dtype=bool)
        stack = mask_summary_stack(make_set([bits], 2, 2), class_ids=None, class_cap=2)
        assert np.all(stack[2 + 0] == 1.0)


class TestGradChecks:
    @pytest.mark.parametrize("op", ["linear", "cross-attention", "low-freq", "high-freq"])
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_analytic_gradients(self, op, seed):
        report = gradcheck(op, seed=seed)
        assert report.passed, "\n".join(report.lines())
