import numpy as np
import pytest

from mmkdda import autodiff as ad
from mmkdda.autodiff import Tensor
from mmkdda.distill import (
    multiscale_embedding,
    multiscale_kd_loss,
    slice_embedding,
    validate_scales,
)

from gradcheck import max_rel_error, numeric_grad


def reference_embedding(feature):
    """Independent pooled-slice oracle on a (C, H, W) numpy array."""
    c, h, w = feature.shape
    out = np.zeros((h + w, c))
    for ch in range(c):
        for row in range(h):
            out[row, ch] = feature[ch, row, :].mean()
        for col in range(w):
            out[h + col, ch] = feature[ch, :, col].mean()
    return out


def reference_kd_loss(current_taps, teacher_taps, scales):
    """Brute-force slice-then-pool distillation loss (per-sample taps)."""
    total = 0.0
    for cur, tea in zip(current_taps, teacher_taps):
        _, h, w = cur.shape
        for s in scales:
            rh, rw = h // s, w // s
            for i in range(s):
                for j in range(s):
                    csub = cur[:, i * rh : (i + 1) * rh, j * rw : (j + 1) * rw]
                    tsub = tea[:, i * rh : (i + 1) * rh, j * rw : (j + 1) * rw]
                    diff = reference_embedding(csub) - reference_embedding(tsub)
                    total += float(np.sum(diff**2))
    return total / len(current_taps)


class TestSliceEmbedding:
    def test_constant_map(self):
        emb = slice_embedding(np.full((3, 4, 5), 2.5)).data
        assert emb.shape == (9, 3)
        assert np.all(emb == 2.5)

    def test_hand_arithmetic_2x2(self):
        emb = slice_embedding(np.array([[[1.0, 2.0], [3.0, 4.0]]])).data
        np.testing.assert_array_equal(emb[:, 0], [1.5, 3.5, 2.0, 3.0])

    def test_row_permutation_touches_only_that_rows_entries(self):
        rng = np.random.default_rng(0)
        feature = rng.normal(size=(2, 4, 6))
        permuted = feature.copy()
        permuted[:, 1, :] = permuted[:, 1, ::-1]  # shuffle within row 1
        base = slice_embedding(feature).data
        after = slice_embedding(permuted).data
        # width-pooled block of row 1 is a mean over the same values
        np.testing.assert_allclose(after[:4], base[:4], atol=1e-15)

    def test_matches_reference(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            feature = rng.normal(size=(3, 4, 4))
            np.testing.assert_allclose(
                slice_embedding(feature).data, reference_embedding(feature), atol=1e-14
            )

    def test_batched_layout(self):
        rng = np.random.default_rng(2)
        batch = rng.normal(size=(5, 2, 4, 6))
        emb = slice_embedding(batch).data
        assert emb.shape == (5, 10, 2)
        for n in range(5):
            np.testing.assert_allclose(emb[n], reference_embedding(batch[n]), atol=1e-14)


class TestMultiscaleEmbedding:
    def test_region_count(self):
        emb = multiscale_embedding(np.ones((1, 4, 4)), scales=(1, 2))
        counts = {scale: len(regions) for scale, regions in emb.scales}
        assert counts == {1: 1, 2: 4}

    def test_constant_map_all_regions_constant(self):
        emb = multiscale_embedding(np.full((2, 4, 4), 0.7), scales=(1, 2))
        for _, regions in emb.scales:
            for region in regions:
                assert np.all(region.data.data == 0.7)

    def test_quadrants_match_slice_then_embed_oracle(self):
        rng = np.random.default_rng(3)
        feature = rng.normal(size=(3, 6, 8))
        emb = multiscale_embedding(feature, scales=(2,))
        regions = emb.scales[0][1]
        rh, rw = 3, 4
        idx = 0
        for i in range(2):
            for j in range(2):  # row-major ordering
                sub = feature[:, i * rh : (i + 1) * rh, j * rw : (j + 1) * rw]
                np.testing.assert_array_equal(regions[idx].data.data, reference_embedding(sub))
                idx += 1

    def test_indivisible_dims_rejected(self):
        with pytest.raises(ValueError, match="divisible"):
            multiscale_embedding(np.ones((1, 3, 4)), scales=(2,))
        with pytest.raises(ValueError, match="divisible"):
            validate_scales([(8, 3, 4)], scales=(1, 2))
        assert validate_scales([(8, 4, 4)], scales=(1, 2)) == [1, 2]


class TestKdLoss:
    def test_self_distillation_is_exact_zero(self):
        rng = np.random.default_rng(4)
        taps = [rng.normal(size=(2, 4, 4)), rng.normal(size=(3, 2, 2))]
        loss = multiscale_kd_loss(taps, [t.copy() for t in taps], scales=(1, 2))
        assert loss.item() == 0.0

    def test_hand_example_constant_one_vs_zero(self):
        loss = multiscale_kd_loss([np.ones((1, 2, 2))], [np.zeros((1, 2, 2))], scales=(1,))
        assert loss.item() == pytest.approx(4.0, abs=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(5)
        a = [rng.normal(size=(2, 4, 4))]
        b = [rng.normal(size=(2, 4, 4))]
        fwd = multiscale_kd_loss(a, b, scales=(1, 2)).item()
        rev = multiscale_kd_loss(b, a, scales=(1, 2)).item()
        assert fwd == pytest.approx(rev, abs=1e-12)

    def test_matches_bruteforce_reference(self):
        rng = np.random.default_rng(6)
        for _ in range(30):
            c = int(rng.integers(1, 5))
            hw = int(rng.choice([2, 4, 6, 8]))
            cur = [rng.normal(size=(c, hw, hw)) for _ in range(2)]
            tea = [rng.normal(size=(c, hw, hw)) for _ in range(2)]
            got = multiscale_kd_loss(cur, tea, scales=(1, 2)).item()
            want = reference_kd_loss(cur, tea, scales=(1, 2))
            assert abs(got - want) < 1e-10

    def test_scale1_only_reduces_to_single_region_loss(self):
        rng = np.random.default_rng(7)
        cur = [rng.normal(size=(3, 4, 4))]
        tea = [rng.normal(size=(3, 4, 4))]
        got = multiscale_kd_loss(cur, tea, scales=(1,)).item()
        diff = reference_embedding(cur[0]) - reference_embedding(tea[0])
        assert got == pytest.approx(float(np.sum(diff**2)), abs=1e-12)

    def test_adding_scale_two_never_decreases(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            cur = [rng.normal(size=(2, 4, 4))]
            tea = [rng.normal(size=(2, 4, 4))]
            one = multiscale_kd_loss(cur, tea, scales=(1,)).item()
            both = multiscale_kd_loss(cur, tea, scales=(1, 2)).item()
            assert both >= one

    def test_nonnegative_zero_only_when_embeddings_match(self):
        rng = np.random.default_rng(9)
        cur = [rng.normal(size=(2, 4, 4))]
        tea = [rng.normal(size=(2, 4, 4))]
        assert multiscale_kd_loss(cur, tea, scales=(1, 2)).item() > 0.0

    def test_batch_mean_semantics(self):
        rng = np.random.default_rng(10)
        cur = rng.normal(size=(3, 2, 4, 4))
        tea = rng.normal(size=(3, 2, 4, 4))
        batched = multiscale_kd_loss([cur], [tea], scales=(1, 2)).item()
        per_sample = [
            multiscale_kd_loss([cur[i]], [tea[i]], scales=(1, 2)).item() for i in range(3)
        ]
        assert batched == pytest.approx(np.mean(per_sample), abs=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        teacher = rng.normal(size=(2, 4, 4))
        current = rng.normal(size=(2, 4, 4))

        def scalar_fn(arr):
            return multiscale_kd_loss([Tensor(arr)], [teacher], scales=(1, 2)).item()

        leaf = Tensor(current, requires_grad=True)
        ad.backward(multiscale_kd_loss([leaf], [teacher], scales=(1, 2)))
        expected = numeric_grad(scalar_fn, [current], 0)
        assert max_rel_error(leaf.grad, expected) < 1e-4

    def test_teacher_receives_no_gradient(self):
        rng = np.random.default_rng(12)
        cur = Tensor(rng.normal(size=(2, 4, 4)), requires_grad=True)
        tea = Tensor(rng.normal(size=(2, 4, 4)), requires_grad=True)
        ad.backward(multiscale_kd_loss([cur], [tea], scales=(1,)))
        assert cur.grad is not None
        assert tea.grad is None  # detached internally

    def test_shape_mismatch(self):
        with pytest.raises(ad.ShapeError, match="tap shapes"):
            multiscale_kd_loss([np.ones((1, 4, 4))], [np.ones((2, 4, 4))], scales=(1,))
        with pytest.raises(ad.ShapeError, match="length"):
            multiscale_kd_loss([np.ones((1, 4, 4))], [], scales=(1,))

    def test_normalized_variant(self):
        rng = np.random.default_rng(13)
        cur = [rng.normal(size=(2, 4, 4))]
        # Scaling the current features changes the raw loss but not the
        # normalized one when the teacher is a scaled copy.
        tea = [cur[0] * 3.0]
        raw = multiscale_kd_loss(cur, tea, scales=(1,)).item()
        normed = multiscale_kd_loss(cur, tea, scales=(1,), normalize=True).item()
        assert raw > 1e-3
        assert normed == pytest.approx(0.0, abs=1e-9)
