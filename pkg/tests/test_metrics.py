"""Explanation-quality metrics: anchors, tie rules, curve bookkeeping."""

import logging

import numpy as np
import pytest

from attncert.metrics import (
    PERTURBATION_FRACTIONS,
    average_precision,
    erase_pixels,
    miou,
    p_auc,
    perturbation_curve,
    pixel_accuracy,
    s_faith,
    upsample_attention,
)


class TestSFaith:
    def test_identical_maps(self):
        m = np.random.default_rng(0).random((4, 4))
        assert s_faith(m, m) == 16 / 0.01

    def test_known_difference(self):
        a = np.array([[0.0, 1.0], [1.0, 0.0]])
        b = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert s_faith(a, b) == pytest.approx(4.0 / 4.01, rel=1e-15)

    def test_decreases_with_drift(self):
        m = np.zeros((3, 3))
        drift1 = s_faith(m, m + 0.1)
        drift2 = s_faith(m, m + 0.5)
        assert drift2 < drift1 < s_faith(m, m)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="share a shape"):
            s_faith(np.zeros((2, 2)), np.zeros((3, 3)))


class TestPixelAccuracy:
    def test_perfect(self):
        mask = np.array([[1, 1], [0, 0]])
        assert pixel_accuracy(mask.astype(float), mask) == 1.0

    def test_strict_threshold(self):
        # constant saliency binarizes to all-False (nothing exceeds the mean)
        sal = np.full((2, 2), 0.5)
        mask = np.zeros((2, 2))
        assert pixel_accuracy(sal, mask) == 1.0

    def test_half_wrong(self):
        sal = np.array([[1.0, 1.0], [0.0, 0.0]])
        mask = np.array([[1, 0], [1, 0]])
        assert pixel_accuracy(sal, mask) == 0.5


class TestMiou:
    def test_perfect(self):
        mask = np.array([[1, 0], [0, 1]])
        assert miou(mask.astype(float), mask) == 1.0

    def test_empty_union_convention(self):
        # all-zero mask and all-zero binarized saliency: both classes vacuous
        # for the positive class, IoU defined as 1
        assert miou(np.zeros((2, 2)), np.zeros((2, 2))) == 1.0

    def test_known_value(self):
        sal = np.array([[1.0, 1.0], [0.0, 0.0]])
        mask = np.array([[1, 0], [0, 0]])
        # positive: inter 1, union 2 -> 1/2; negative: inter 2, union 3 -> 2/3
        assert miou(sal, mask) == pytest.approx(7 / 12)


class TestAveragePrecision:
    def test_perfect_ranking(self):
        sal = np.array([[0.9, 0.8], [0.1, 0.2]])
        mask = np.array([[1, 1], [0, 0]])
        assert average_precision(sal, mask) == 1.0

    def test_orderings_are_ordered(self):
        rng = np.random.default_rng(1)
        mask = np.zeros(64)
        mask[:16] = 1
        oracle = mask + rng.random(64) * 0.01
        anti = 1.0 - mask + rng.random(64) * 0.01
        noise = rng.random(64)
        ap_o = average_precision(oracle, mask)
        ap_n = average_precision(noise, mask)
        ap_a = average_precision(anti, mask)
        assert ap_a < ap_n < ap_o == 1.0

    def test_bounded(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            sal = rng.random(30)
            mask = rng.integers(0, 2, 30)
            if mask.sum() == 0:
                continue
            assert 0.0 <= average_precision(sal, mask) <= 1.0

    def test_empty_mask_warns_and_zero(self, caplog):
        with caplog.at_level(logging.WARNING):
            ap = average_precision(np.ones(4), np.zeros(4))
        assert ap == 0.0
        assert any("empty mask" in r.message for r in caplog.records)


class TestErasePixels:
    def test_most_salient_first(self):
        img = np.full((2, 2), 7.0)
        sal = np.array([[3.0, 1.0], [2.0, 2.0]])
        out = erase_pixels(img, sal, 0.5, most_salient_first=True)
        # top half: value 3 (flat 0), then the tie at 2 resolved to flat 2
        np.testing.assert_array_equal(out, [[0.0, 7.0], [0.0, 7.0]])

    def test_least_salient_first(self):
        img = np.full((2, 2), 7.0)
        sal = np.array([[3.0, 1.0], [2.0, 2.0]])
        out = erase_pixels(img, sal, 0.25, most_salient_first=False)
        np.testing.assert_array_equal(out, [[7.0, 0.0], [7.0, 7.0]])

    def test_fraction_zero_copies(self):
        img = np.arange(4.0).reshape(2, 2)
        out = erase_pixels(img, img, 0.0, True)
        np.testing.assert_array_equal(out, img)
        assert out is not img

    def test_fraction_one_fills_everything(self):
        out = erase_pixels(np.ones((2, 2)), np.ones((2, 2)), 1.0, True,
                           fill=-5.0)
        np.testing.assert_array_equal(out, np.full((2, 2), -5.0))

    def test_custom_fill(self):
        out = erase_pixels(np.ones(4), np.array([4.0, 3.0, 2.0, 1.0]),
                           0.25, True, fill=0.5)
        np.testing.assert_array_equal(out, [0.5, 1.0, 1.0, 1.0])


class TestPerturbationCurve:
    def test_anchor_and_length(self):
        curve = perturbation_curve(lambda img: 0, np.ones((4, 4)),
                                   np.ones((4, 4)))
        assert curve[0] == (0.0, 1.0)
        assert len(curve) == 10
        assert [f for f, _ in curve[1:]] == list(PERTURBATION_FRACTIONS)

    def test_sensitive_predictor_drops(self):
        # prediction flips once more than half the mass is gone
        def predict(img):
            return int(img.sum() > 8.0)

        image = np.ones((4, 4))
        sal = np.arange(16.0).reshape(4, 4)
        curve = perturbation_curve(predict, image, sal)
        values = [c for _, c in curve]
        assert values[0] == 1.0 and values[-1] == 0.0
        assert all(v in (0.0, 1.0) for v in values)

    def test_constant_predictor_flat(self):
        curve = perturbation_curve(lambda img: 1, np.ones((4, 4)),
                                   np.ones((4, 4)))
        assert all(c == 1.0 for _, c in curve)


class TestPAuc:
    def test_mean_of_nonzero_fractions(self):
        curve = [(0.0, 1.0)] + [(f, 1.0) for f in PERTURBATION_FRACTIONS]
        assert p_auc(curve) == 100.0
        curve[5] = (curve[5][0], 0.0)
        assert p_auc(curve) == pytest.approx(100.0 * 8 / 9)

    def test_needs_nonzero_points(self):
        with pytest.raises(ValueError, match="no nonzero fractions"):
            p_auc([(0.0, 1.0)])


class TestUpsample:
    def test_block_structure(self):
        up = upsample_attention(np.array([0.1, 0.2, 0.3, 0.4]), 8, 4)
        assert up.shape == (8, 8)
        assert np.all(up[:4, :4] == 0.1)
        assert np.all(up[:4, 4:] == 0.2)
        assert np.all(up[4:, :4] == 0.3)
        assert np.all(up[4:, 4:] == 0.4)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="attention length"):
            upsample_attention(np.ones(3), 8, 4)
