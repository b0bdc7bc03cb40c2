"""Depth metrics against hand arithmetic, their invariances, and the
flip / multiscale post-processing paths."""

import numpy as np
import pytest

from stereodepth.levels import make_levels
from stereodepth.metrics import (
    PP_MODES,
    EvalReport,
    evaluate,
    flip_merge,
    image_errors,
    postprocess_disparity,
    psnr,
)
from stereodepth.network import DispNet, toy_config

GT4 = np.array([10.0, 20.0, 40.0, 80.0])
PRED4 = np.array([11.0, 18.0, 50.0, 80.0])


class TestImageErrors:
    def test_four_pixel_hand_example(self):
        """gt (10,20,40,80) vs pred (11,18,50,80) at cap 80, hand-derived.

        The 50/40 ratio is exactly 1.25, which the strict a1 threshold
        excludes, so a1 is 3/4.
        """
        abs_rel, sq_rel, rmse, rmse_log, a1, a2, a3 = image_errors(GT4, PRED4, cap=80.0)
        assert abs_rel == pytest.approx(0.1125, abs=1e-12)
        assert sq_rel == pytest.approx(0.7, abs=1e-12)
        assert rmse == pytest.approx(np.sqrt(26.25), abs=1e-12)
        want_log = np.sqrt(np.mean([np.log(1.1) ** 2, np.log(0.9) ** 2,
                                    np.log(1.25) ** 2, 0.0]))
        assert rmse_log == pytest.approx(want_log, abs=1e-12)
        assert a1 == 0.75
        assert a2 == 1.0
        assert a3 == 1.0

    def test_identity_is_exactly_zero(self, rng):
        gt = rng.uniform(1.0, 60.0, size=(8, 8))
        vals = image_errors(gt, gt.copy(), cap=80.0)
        assert vals[:4] == (0.0, 0.0, 0.0, 0.0)
        assert vals[4:] == (1.0, 1.0, 1.0)

    @pytest.mark.parametrize("s", [0.5, 1.0, 2.0])
    def test_median_scaling_cancels_global_scale(self, rng, s):
        gt = rng.uniform(1.0, 60.0, size=(6, 7))
        vals = image_errors(gt, s * gt, cap=80.0, median_scaling=True)
        np.testing.assert_allclose(vals[:4], 0.0, atol=1e-12)
        assert vals[4:] == (1.0, 1.0, 1.0)

    def test_permutation_invariance(self, rng):
        gt = rng.uniform(1.0, 60.0, size=64)
        pred = rng.uniform(1.0, 60.0, size=64)
        perm = rng.permutation(64)
        a = image_errors(gt, pred, 80.0)
        b = image_errors(gt[perm], pred[perm], 80.0)
        np.testing.assert_allclose(a, b, rtol=1e-12)

    def test_threshold_metrics_symmetric_in_pred_gt(self, rng):
        gt = rng.uniform(5.0, 50.0, size=32)
        pred = rng.uniform(5.0, 50.0, size=32)
        a = image_errors(gt, pred, 80.0)[4:]
        b = image_errors(pred, gt, 80.0)[4:]
        assert a == b

    def test_pixels_above_cap_excluded(self):
        gt = np.array([10.0, 500.0])
        pred = np.array([20.0, 1.0])
        vals = image_errors(gt, pred, cap=80.0)
        assert vals[0] == pytest.approx(1.0)  # only the first pixel counts

    def test_zero_gt_pixels_excluded(self):
        gt = np.array([0.0, 10.0])
        pred = np.array([3.0, 10.0])
        assert image_errors(gt, pred, cap=80.0)[0] == 0.0

    def test_pred_floor_keeps_log_finite(self):
        gt = np.array([40.0])
        pred = np.array([0.0])
        vals = image_errors(gt, pred, cap=80.0)
        assert np.isfinite(vals[3])
        # floored at cap/1000 = 0.08
        assert vals[0] == pytest.approx((40.0 - 0.08) / 40.0)

    def test_validation(self):
        with pytest.raises(ValueError, match="shape"):
            image_errors(np.ones(3), np.ones(4), 80.0)
        with pytest.raises(ValueError, match="cap"):
            image_errors(GT4, PRED4, cap=0.0)
        with pytest.raises(ValueError, match="valid"):
            image_errors(np.zeros(4), PRED4, cap=80.0)
        with pytest.raises(ValueError, match="median"):
            image_errors(GT4, np.zeros(4), cap=80.0, median_scaling=True)


class TestEvaluate:
    def test_averages_per_image_tuples(self):
        gt = [GT4, GT4 * 0.5]
        pred = [PRED4, GT4 * 0.5]
        rep = evaluate(gt, pred, cap=80.0)
        a = np.array(image_errors(GT4, PRED4, 80.0))
        b = np.array(image_errors(GT4 * 0.5, GT4 * 0.5, 80.0))
        np.testing.assert_allclose(rep.values(), (a + b) / 2.0, atol=1e-15)
        assert rep.n_images == 2

    def test_report_threshold_monotonicity(self, rng):
        gt = [rng.uniform(1.0, 70.0, size=(8, 8)) for _ in range(4)]
        pred = [g * rng.uniform(0.6, 1.6) for g in gt]
        rep = evaluate(gt, pred, cap=80.0)
        assert rep.a1 <= rep.a2 <= rep.a3 <= 1.0
        assert min(rep.abs_rel, rep.sq_rel, rep.rmse, rep.rmse_log) >= 0.0

    def test_table_and_csv(self, tmp_path):
        rep = evaluate([GT4], [PRED4], cap=80.0)
        table = rep.format_table()
        assert "abs_rel" in table and "0.1125" in table
        path = tmp_path / "report.csv"
        rep.write_csv(path)
        import csv
        with path.open() as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1
        assert float(rows[0]["abs_rel"]) == pytest.approx(0.1125)

    def test_validation(self):
        with pytest.raises(ValueError, match="vs"):
            evaluate([GT4], [], cap=80.0)
        with pytest.raises(ValueError, match="empty"):
            evaluate([], [], cap=80.0)


class TestFlipMerge:
    def test_edge_ownership(self):
        """Direct passes are unreliable at the left frame band, so the
        mirrored estimate owns the left edge and the direct one the right."""
        direct = np.full((4, 200), 2.0)
        mirrored = np.full((4, 200), 4.0)
        merged = flip_merge(direct, mirrored)
        np.testing.assert_allclose(merged[:, 0], 4.0)
        np.testing.assert_allclose(merged[:, -1], 2.0)
        np.testing.assert_allclose(merged[:, 100], 3.0)

    def test_equal_inputs_unchanged(self, rng):
        d = rng.uniform(1.0, 5.0, size=(6, 50))
        np.testing.assert_allclose(flip_merge(d, d), d, rtol=1e-12)


def constant_model():
    model = DispNet(toy_config(9), seed=0)
    model.params["head.w"].data[:] = 0.0
    model.params["head.b"].data[:] = 0.0
    return model


class TestPostprocess:
    def test_mode_none_is_plain_forward(self, rng):
        model = DispNet(toy_config(9), seed=1)
        lv = make_levels(9, 1.0, 16.0)
        img = rng.uniform(size=(3, 64, 96)).astype(np.float32)
        d = postprocess_disparity(model, lv, img, mode="none")
        with_np = model.predict_disparity
        from stereodepth.autodiff import Tensor
        direct = with_np(Tensor(img[None]), lv).data[0, 0]
        np.testing.assert_allclose(d, direct, atol=1e-7)

    def test_flip_pp_fixed_point_on_constant_model(self, rng):
        """A flip-symmetric prediction is unchanged by flip post-processing."""
        lv = make_levels(9, 1.0, 16.0)
        img = rng.uniform(size=(3, 64, 96)).astype(np.float32)
        model = constant_model()
        none = postprocess_disparity(model, lv, img, mode="none")
        flip = postprocess_disparity(model, lv, img, mode="flip")
        np.testing.assert_allclose(flip, none, rtol=1e-5)

    def test_multiscale_rescales_values_back_to_full_width(self, rng):
        """A scale-covariant predictor (disparity proportional to input
        width, as a trained net is) is a fixed point of multiscale PP."""

        class _WidthModel:
            config = toy_config(9)

            def predict_disparity(self, img, levels=None, alignment=None):
                from stereodepth.autodiff import Tensor
                b, _, h, w = img.data.shape
                return Tensor(np.full((b, 1, h, w), 0.05 * w, dtype=np.float32))

        lv = make_levels(9, 1.0, 16.0)
        img = rng.uniform(size=(3, 64, 96)).astype(np.float32)
        out = postprocess_disparity(_WidthModel(), lv, img, mode="multiscale-flip")
        np.testing.assert_allclose(out, 0.05 * 96, rtol=1e-5)

    def test_indivisible_scale_warns_and_skips(self, rng):
        lv = make_levels(9, 1.0, 16.0)
        img = rng.uniform(size=(3, 72, 96)).astype(np.float32)  # 0.75 -> 54, skipped
        model = constant_model()
        with pytest.warns(UserWarning, match="skipped"):
            out = postprocess_disparity(model, lv, img, mode="multiscale-flip")
        assert out.shape == (72, 96)

    def test_all_scales_skipped_is_error(self, rng):
        lv = make_levels(9, 1.0, 16.0)
        img = rng.uniform(size=(3, 60, 92)).astype(np.float32)
        with pytest.warns(UserWarning):
            with pytest.raises(ValueError, match="all postprocess scales"):
                postprocess_disparity(constant_model(), lv, img, mode="multiscale-flip")

    def test_unknown_mode_rejected(self, rng):
        lv = make_levels(9, 1.0, 16.0)
        with pytest.raises(ValueError, match="postprocess mode"):
            postprocess_disparity(constant_model(), lv,
                                  np.zeros((3, 64, 96), np.float32), mode="both")
        assert set(PP_MODES) == {"none", "flip", "multiscale-flip"}


class TestPsnr:
    def test_known_mse(self):
        a = np.zeros((3, 4, 4))
        b = np.full((3, 4, 4), 0.1)
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)

    def test_identical_is_infinite(self, rng):
        img = rng.uniform(size=(3, 5, 5))
        assert psnr(img, img) == np.inf

    def test_mask_restricts_comparison(self):
        a = np.zeros((1, 2, 4))
        b = a.copy()
        b[..., 0] = 1.0  # huge error in one column
        mask = np.ones((2, 4), dtype=bool)
        mask[:, 0] = False
        assert psnr(a, b, mask=mask) == np.inf
        assert psnr(a, b) < 10.0

    def test_validation(self):
        with pytest.raises(ValueError, match="mismatch"):
            psnr(np.zeros((2, 2)), np.zeros((2, 3)))
        with pytest.raises(ValueError, match="no pixels"):
            psnr(np.zeros((2, 2)), np.zeros((2, 2)), mask=np.zeros((2, 2), dtype=bool))
