"""Loss-module behavior pinned by hand-worked closed forms.

The frozen values were derived on paper before the implementation:

* two orthogonal unit pairs at temperature 1 give an object loss of
  2*ln(1 + e^-1),
* any batch of two whose pooled/text cosines are all equal gives
  2*ln(2) at every level that uses cosines, independent of temperature,
* a batch of one is exactly 0 at every level (the log-sum-exp of a
  single logit equals the positive logit, with no rounding),
* a 2x2x2 pixel-mining instance worked by hand gives 3.0365734.
"""

import math

import numpy as np
import pytest
from conftest import fd_grad

from segalign import autodiff as ad
from segalign.autodiff import Tensor
from segalign.errors import ZeroNormError
from segalign.losses import (
    LossBreakdown,
    loss_components_tensors,
    loss_object,
    loss_pixel,
    loss_region,
    loss_total,
    loss_total_tensors,
    mine_pixel_pairs,
    semi_hard_rank,
    similarity_scale,
)


def one_pixel_batch(vectors, texts):
    """B images of a single pixel each: pooled representation == the pixel."""
    v = np.asarray(vectors, dtype=np.float64)[:, None, :]
    t = np.asarray(texts, dtype=np.float64)
    return v, t


class TestClosedForms:
    def test_object_orthogonal_pairs(self):
        v, t = one_pixel_batch([[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]])
        expected = 2.0 * math.log(1.0 + math.exp(-1.0))
        assert abs(loss_object(v, t, temperature=1.0) - expected) < 1e-4
        # region level sees the same cosine matrix in this degenerate setup
        assert abs(loss_region(v, t, temperature=1.0) - expected) < 1e-4

    def test_all_equal_cosines_give_two_ln_two(self):
        # magnitudes differ but directions agree; cosine kills the magnitudes
        v, t = one_pixel_batch([[2.0, 0.0], [0.5, 0.0]], [[1.0, 0.0], [3.0, 0.0]])
        for tau in (1.0, 0.07):
            assert abs(loss_object(v, t, temperature=tau) - 2.0 * math.log(2.0)) < 1e-4
            assert abs(loss_region(v, t, temperature=tau) - 2.0 * math.log(2.0)) < 1e-4

    def test_batch_of_one_is_exactly_zero(self):
        rng = np.random.default_rng(0)
        v = rng.standard_normal((1, 6, 4))
        t = rng.standard_normal((1, 4))
        breakdown = loss_total(v, t)
        assert breakdown.object_level == 0.0
        assert breakdown.region_level == 0.0
        assert breakdown.pixel_level == 0.0
        assert breakdown.total == 0.0

    def test_pixel_loss_hand_instance(self):
        # C=1, V = [[2,1],[1,3]], T = [1,-1], rank-1 positives, scale 1, tau 1:
        #   mined = [[2,-1],[3,-1]]; worked value 3.0365734
        v = np.array([[[2.0], [1.0]], [[1.0], [3.0]]])
        t = np.array([[1.0], [-1.0]])
        got = loss_pixel(v, t, temperature=1.0, pixel_fraction=0.5, scale=1.0)
        assert abs(got - 3.0365734) < 1e-6

    def test_pixel_rank_changes_value(self):
        v = np.array([[[2.0], [1.0]], [[1.0], [3.0]]])
        t = np.array([[1.0], [-1.0]])
        rank1 = loss_pixel(v, t, temperature=1.0, pixel_fraction=0.5, scale=1.0)
        rank2 = loss_pixel(v, t, temperature=1.0, pixel_fraction=1.0, scale=1.0)
        assert rank2 > rank1  # weaker positive logit raises the loss here


class TestSemiHardRank:
    def test_reference_values(self):
        assert semi_hard_rank(0.06, 64) == 4
        assert semi_hard_rank(0.06, 196) == 12
        assert semi_hard_rank(0.06, 16) == 1
        assert semi_hard_rank(0.0, 100) == 1
        assert semi_hard_rank(1.0, 9) == 9

    def test_half_rounds_to_even(self):
        assert semi_hard_rank(0.5, 5) == 2
        assert semi_hard_rank(0.5, 7) == 4

    def test_validation(self):
        with pytest.raises(ValueError):
            semi_hard_rank(-0.01, 10)
        with pytest.raises(ValueError):
            semi_hard_rank(0.5, 0)


class TestMining:
    def test_hand_instance(self):
        s = np.array(
            [
                [[3.0, 1.0, 2.0], [0.0, 5.0, 0.0]],
                [[1.0, 1.0, 1.0], [9.0, 2.0, 9.0]],
            ]
        )
        pairs = mine_pixel_pairs(s, fraction=2 / 3, scale=1.0)
        assert pairs.positive_rank == 2
        np.testing.assert_array_equal(pairs.positive_index, [2, 2])
        np.testing.assert_array_equal(pairs.hardest_index, [[2, 1], [0, 2]])
        np.testing.assert_allclose(pairs.mined, [[2.0, 5.0], [1.0, 9.0]])

    def test_argmax_tie_takes_first(self):
        s = np.array([[[1.0, 1.0]], [[0.0, 0.0]]])
        s = np.broadcast_to(s[:, 0], (2, 2, 2)).copy()
        pairs = mine_pixel_pairs(s, fraction=0.0, scale=1.0)
        assert pairs.hardest_index[0, 1] == 0

    def test_scale_divides_mined(self):
        rng = np.random.default_rng(1)
        s = rng.standard_normal((2, 2, 5))
        a = mine_pixel_pairs(s, scale=1.0)
        b = mine_pixel_pairs(s, scale=4.0)
        np.testing.assert_array_equal(a.hardest_index, b.hardest_index)
        np.testing.assert_allclose(a.mined, 4.0 * b.mined)

    def test_validation(self):
        with pytest.raises(ValueError):
            mine_pixel_pairs(np.zeros((2, 3, 4)))
        with pytest.raises(ValueError):
            mine_pixel_pairs(np.zeros((2, 2, 4)), scale=0.0)


class TestSimilarityScale:
    def test_values(self):
        assert similarity_scale(4) == 10.0
        assert abs(similarity_scale(16) - 20.0) < 1e-12
        with pytest.raises(ValueError):
            similarity_scale(0)

    def test_default_scale_tracks_width(self):
        rng = np.random.default_rng(2)
        v = rng.standard_normal((2, 5, 4))
        t = rng.standard_normal((2, 4))
        auto = loss_pixel(v, t)
        explicit = loss_pixel(v, t, scale=10.0)
        assert auto == explicit
        assert loss_pixel(v, t, scale=1.0) != auto


class TestComposition:
    def test_breakdown_sums_enabled(self):
        rng = np.random.default_rng(3)
        v = rng.standard_normal((3, 8, 4))
        t = rng.standard_normal((3, 4))
        full = loss_total(v, t)
        assert isinstance(full, LossBreakdown)
        np.testing.assert_allclose(
            full.total, full.object_level + full.region_level + full.pixel_level, atol=1e-12
        )
        np.testing.assert_allclose(full.object_level, loss_object(v, t), atol=1e-12)
        np.testing.assert_allclose(full.region_level, loss_region(v, t), atol=1e-12)
        np.testing.assert_allclose(full.pixel_level, loss_pixel(v, t), atol=1e-12)

    def test_disabled_components_report_zero(self):
        rng = np.random.default_rng(4)
        v = rng.standard_normal((2, 4, 3))
        t = rng.standard_normal((2, 3))
        only_obj = loss_total(v, t, components=("object",))
        assert only_obj.region_level == 0.0
        assert only_obj.pixel_level == 0.0
        assert only_obj.total == only_obj.object_level

    def test_unknown_or_empty_components_rejected(self):
        v = np.ones((2, 2, 2))
        t = np.ones((2, 2))
        with pytest.raises(ValueError):
            loss_total(v, t, components=("object", "global"))
        with pytest.raises(ValueError):
            loss_total(v, t, components=())

    def test_temperature_must_be_positive(self):
        with pytest.raises(ValueError):
            loss_total(np.ones((2, 2, 2)), np.ones((2, 2)), temperature=0.0)


class TestZeroNorm:
    def test_zero_text_row_raises(self):
        rng = np.random.default_rng(5)
        v = rng.standard_normal((2, 4, 3))
        t = rng.standard_normal((2, 3))
        t[1] = 0.0
        with pytest.raises(ZeroNormError):
            loss_object(v, t)
        with pytest.raises(ZeroNormError):
            loss_region(v, t)

    def test_zero_pixels_raise_for_pooled_levels_only(self):
        t = np.array([[1.0, 0.0], [0.0, 1.0]])
        v = np.zeros((2, 4, 2))
        with pytest.raises(ZeroNormError):
            loss_object(v, t)
        # pixel level uses raw dots, no cosine: zero embeddings are legal there
        assert math.isfinite(loss_pixel(v, t))


class TestGradients:
    def test_total_loss_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        v0 = rng.standard_normal((2, 4, 3))
        t0 = rng.standard_normal((2, 3))

        def value(v_arr, t_arr):
            total, _ = loss_total_tensors(v_arr.copy(), t_arr.copy(), temperature=0.5)
            return float(total.data)

        v = Tensor(v0.copy(), requires_grad=True)
        t = Tensor(t0.copy(), requires_grad=True)
        total, _ = loss_total_tensors(v, t, temperature=0.5)
        total.backward()
        gv = fd_grad(lambda x: value(x, t0), v0.copy(), eps=1e-6)
        gt = fd_grad(lambda x: value(v0, x), t0.copy(), eps=1e-6)
        ref = max(np.abs(v.grad).max(), np.abs(t.grad).max())
        np.testing.assert_allclose(v.grad, gv, atol=1e-5 * ref)
        np.testing.assert_allclose(t.grad, gt, atol=1e-5 * ref)

    def test_components_share_one_graph(self):
        rng = np.random.default_rng(7)
        v = Tensor(rng.standard_normal((2, 4, 3)), requires_grad=True)
        t = Tensor(rng.standard_normal((2, 3)))
        parts = loss_components_tensors(v, t)
        assert set(parts) == {"object", "region", "pixel"}
        total = parts["object"] + parts["region"] + parts["pixel"]
        total.backward()
        assert v.grad is not None and np.all(np.isfinite(v.grad))
