"""Probability volumes, soft disparity regression, and view synthesis."""

import numpy as np
import pytest

from stereodepth.autodiff import Tensor
from stereodepth.levels import LINEAR, make_levels
from stereodepth.volume import (
    LEFT,
    RIGHT,
    DispVolume,
    disparity_from_volume,
    synth_right,
    synthesize_view,
    volume_from_logits,
)
from stereodepth.warp import WarpDirection


def one_hot(channel, count, h, w):
    probs = np.zeros((1, count, h, w), dtype=np.float32)
    probs[:, channel] = 1.0
    return probs


class TestDispVolume:
    def test_rejects_unnormalized(self):
        lv = make_levels(3, 1.0, 3.0, LINEAR)
        bad = Tensor(np.full((1, 3, 2, 2), 0.5, dtype=np.float32))
        with pytest.raises(ValueError, match="sum to 1"):
            DispVolume(bad, lv, LEFT)

    def test_warped_volume_skips_normalization_check(self):
        lv = make_levels(3, 1.0, 3.0, LINEAR)
        probs = Tensor(np.full((1, 3, 2, 2), 0.5, dtype=np.float32))
        vol = DispVolume(probs, lv, LEFT, warped=True)
        assert vol.warped

    def test_rejects_bad_alignment_rank_and_channel_count(self):
        lv = make_levels(3, 1.0, 3.0, LINEAR)
        probs = Tensor(one_hot(0, 3, 2, 2))
        with pytest.raises(ValueError, match="alignment"):
            DispVolume(probs, lv, "center")
        with pytest.raises(ValueError, match="B,L,H,W"):
            DispVolume(Tensor(one_hot(0, 3, 2, 2)[0]), lv, LEFT)
        with pytest.raises(ValueError, match="channels"):
            DispVolume(probs, make_levels(4, 1.0, 4.0, LINEAR), LEFT)

    def test_warp_direction_must_match_alignment(self):
        lv = make_levels(3, 1.0, 3.0, LINEAR)
        vol = DispVolume(Tensor(one_hot(0, 3, 2, 4)), lv, LEFT)
        with pytest.raises(ValueError, match="RTOL"):
            vol.warp(WarpDirection.RTOL)
        moved = vol.warp(WarpDirection.LTOR)
        assert moved.alignment == RIGHT
        assert moved.warped

    def test_detach_probs_drops_grad_flag(self):
        lv = make_levels(3, 1.0, 3.0, LINEAR)
        vol = DispVolume(Tensor(one_hot(1, 3, 2, 2), requires_grad=True), lv, LEFT)
        assert not vol.detach_probs().probs.requires_grad


class TestDisparityRegression:
    def test_one_hot_recovers_level_exactly(self):
        lv = make_levels(4, 1.0, 4.0, LINEAR)
        for ch in range(4):
            vol = DispVolume(Tensor(one_hot(ch, 4, 2, 3)), lv, LEFT)
            disp = disparity_from_volume(vol)
            assert disp.shape == (1, 1, 2, 3)
            np.testing.assert_allclose(disp.data, np.full((1, 1, 2, 3), lv.values[ch]))

    def test_uniform_volume_gives_mean_level(self):
        lv = make_levels(5, 1.0, 5.0, LINEAR)
        probs = Tensor(np.full((1, 5, 2, 2), 0.2, dtype=np.float32))
        disp = disparity_from_volume(DispVolume(probs, lv, LEFT))
        np.testing.assert_allclose(disp.data, np.full((1, 1, 2, 2), 3.0), rtol=1e-6)

    def test_warped_volume_rejected(self):
        lv = make_levels(3, 1.0, 3.0, LINEAR)
        vol = DispVolume(Tensor(one_hot(0, 3, 2, 4)), lv, LEFT).warp(WarpDirection.LTOR)
        with pytest.raises(ValueError, match="warped"):
            disparity_from_volume(vol)

    def test_volume_from_logits_softmaxes(self):
        lv = make_levels(3, 1.0, 3.0, LINEAR)
        logits = Tensor(np.zeros((1, 3, 2, 2), dtype=np.float32))
        vol = volume_from_logits(logits, lv, RIGHT)
        np.testing.assert_allclose(vol.probs.data, np.full((1, 3, 2, 2), 1 / 3), rtol=1e-6)
        assert vol.alignment == RIGHT
        assert not vol.warped


class TestSynthesizeView:
    def test_constant_integer_disparity_shifts_image(self, rng):
        """Sharp one-hot logits at level d reproduce a plain d-pixel shift."""
        lv = make_levels(4, 1.0, 4.0, LINEAR)
        img = Tensor(rng.uniform(0.1, 1.0, size=(1, 3, 4, 9)).astype(np.float32))
        logits = Tensor(one_hot(2, 4, 4, 9) * 60.0)  # d = 3
        synth, vol = synthesize_view(img, logits, lv, WarpDirection.LTOR)
        np.testing.assert_allclose(synth.data[..., :6], img.data[..., 3:], rtol=1e-5)
        # columns with no incoming mass keep the uniform-softmax mixture
        assert vol.alignment == RIGHT

    def test_rtol_shifts_other_way(self, rng):
        lv = make_levels(4, 1.0, 4.0, LINEAR)
        img = Tensor(rng.uniform(0.1, 1.0, size=(1, 1, 2, 8)).astype(np.float32))
        logits = Tensor(one_hot(1, 4, 2, 8) * 60.0)  # d = 2
        synth, vol = synthesize_view(img, logits, lv, WarpDirection.RTOL)
        np.testing.assert_allclose(synth.data[..., 2:], img.data[..., :6], rtol=1e-5)
        assert vol.alignment == LEFT

    def test_returned_volume_is_destination_aligned_and_normalized(self, rng):
        lv = make_levels(5, 1.0, 5.0, LINEAR)
        img = Tensor(rng.uniform(size=(2, 3, 4, 7)).astype(np.float32))
        logits = Tensor(rng.normal(size=(2, 5, 4, 7)).astype(np.float32))
        _, vol = synthesize_view(img, logits, lv, WarpDirection.LTOR)
        assert not vol.warped
        np.testing.assert_allclose(vol.probs.data.sum(axis=1), np.ones((2, 4, 7)), rtol=1e-5)

    def test_synth_right_is_ltor(self, rng):
        lv = make_levels(3, 1.0, 3.0, LINEAR)
        img = Tensor(rng.uniform(size=(1, 3, 2, 5)).astype(np.float32))
        logits = Tensor(rng.normal(size=(1, 3, 2, 5)).astype(np.float32))
        a, _ = synth_right(img, logits, lv)
        b, _ = synthesize_view(img, logits, lv, WarpDirection.LTOR)
        np.testing.assert_array_equal(a.data, b.data)

    def test_shape_validation(self, rng):
        lv = make_levels(3, 1.0, 3.0, LINEAR)
        img = Tensor(rng.uniform(size=(1, 3, 2, 5)).astype(np.float32))
        with pytest.raises(ValueError, match="expects"):
            synthesize_view(Tensor(img.data[0]), Tensor(np.zeros((1, 3, 2, 5), dtype=np.float32)), lv)
        with pytest.raises(ValueError, match="do not align"):
            synthesize_view(img, Tensor(np.zeros((1, 3, 2, 6), dtype=np.float32)), lv)
        with pytest.raises(ValueError, match="channels"):
            synthesize_view(img, Tensor(np.zeros((1, 4, 2, 5), dtype=np.float32)), lv)

    def test_mixture_of_two_levels_blends_shifts(self):
        """Equal logits on d=1 and d=3 blend the two shifted copies 50/50."""
        lv = make_levels(3, 1.0, 3.0, LINEAR)
        img = Tensor(np.arange(10.0, dtype=np.float32).reshape(1, 1, 1, 10) + 1.0)
        logits = np.full((1, 3, 1, 10), -60.0, dtype=np.float32)
        logits[:, 0] = 0.0
        logits[:, 2] = 0.0
        synth, _ = synthesize_view(img, Tensor(logits), lv, WarpDirection.LTOR)
        # interior column x reads 0.5*img[x+1] + 0.5*img[x+3]
        want = 0.5 * (img.data[..., 1:8] + img.data[..., 3:10])
        np.testing.assert_allclose(synth.data[..., :7], want, rtol=1e-5)
