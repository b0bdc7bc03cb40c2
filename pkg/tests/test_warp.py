"""Horizontal warp kernels: sampling geometry, zero fill, and the
adjoint identity that ties forward and backward together."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stereodepth.autodiff import Tape, Tensor
from stereodepth.warp import WarpDirection, shift_sample, shift_stack, warp_volume

LTOR = WarpDirection.LTOR
RTOL = WarpDirection.RTOL


def t(arr):
    return Tensor(np.asarray(arr, dtype=np.float32), requires_grad=True)


def row(*vals):
    return np.asarray(vals, dtype=np.float32).reshape(1, 1, 1, -1)


class TestDirections:
    def test_signs(self):
        assert LTOR.sign == 1
        assert RTOL.sign == -1

    def test_opposite_is_involution(self):
        assert LTOR.opposite() is RTOL
        assert RTOL.opposite() is LTOR


class TestShiftSample:
    def test_integer_shift_exact(self):
        x = t(row(1, 2, 3, 4, 5))
        out = shift_sample(x, 2.0, LTOR)
        np.testing.assert_array_equal(out.data, row(3, 4, 5, 0, 0))

    def test_opposite_direction_shifts_other_way(self):
        x = t(row(1, 2, 3, 4, 5))
        out = shift_sample(x, 2.0, RTOL)
        np.testing.assert_array_equal(out.data, row(0, 0, 1, 2, 3))

    def test_fractional_shift_hand_values(self):
        x = t(row(0, 4, 8, 12))
        out = shift_sample(x, 0.25, LTOR)
        # x + 0.25 reads 0.75*x[i] + 0.25*x[i+1]; last column falls off
        np.testing.assert_allclose(out.data, row(1, 5, 9, 9), rtol=1e-6)

    def test_zero_disparity_is_identity(self, rng):
        x = t(rng.normal(size=(2, 3, 4, 5)))
        for direction in (LTOR, RTOL):
            np.testing.assert_array_equal(shift_sample(x, 0.0, direction).data, x.data)

    def test_shift_beyond_width_is_zero(self):
        x = t(row(1, 2, 3))
        assert shift_sample(x, 3.0, LTOR).data.sum() == 0.0
        assert shift_sample(x, 7.5, RTOL).data.sum() == 0.0

    def test_rejects_bad_disparity(self):
        x = t(row(1, 2))
        with pytest.raises(ValueError, match="non-negative"):
            shift_sample(x, -1.0, LTOR)
        with pytest.raises(ValueError, match="finite"):
            shift_sample(x, np.nan, LTOR)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.0, 9.0), st.sampled_from([LTOR, RTOL]), st.integers(0, 2 ** 32 - 1))
    def test_adjoint_identity(self, d, direction, seed):
        """<shift(x), y> == <x, shift^T(y)> with shift^T realised as backward."""
        r = np.random.default_rng(seed)
        x = Tensor(r.normal(size=(1, 2, 3, 8)), requires_grad=True)
        y = r.normal(size=(1, 2, 3, 8))
        with Tape() as tape:
            out = shift_sample(x, d, direction)
            tape.backward((out * Tensor(y)).sum())
        lhs = float((out.data * y).sum())
        rhs = float((x.data * x.grad).sum()) / 1.0
        # grad is shift^T(y); the inner products agree for a linear map
        assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


class TestWarpVolume:
    def test_each_plane_uses_its_own_level(self):
        vol = t(np.stack([np.ones((1, 4)), np.ones((1, 4)) * 2])[None])
        levels = np.array([0.0, 1.0])
        out = warp_volume(vol, levels, LTOR)
        np.testing.assert_array_equal(out.data[0, 0], np.ones((1, 4)))
        np.testing.assert_array_equal(out.data[0, 1], [[2, 2, 2, 0]])

    def test_level_count_must_match_planes(self):
        vol = t(np.ones((1, 3, 2, 4)))
        with pytest.raises(ValueError, match="levels"):
            warp_volume(vol, np.array([1.0, 2.0]), LTOR)

    def test_gradient_routes_back_per_plane(self):
        vol = t(np.ones((1, 2, 1, 3)))
        with Tape() as tape:
            out = warp_volume(vol, np.array([0.0, 1.0]), LTOR)
            tape.backward(out.sum())
        np.testing.assert_array_equal(vol.grad[0, 0], [[1, 1, 1]])
        # plane shifted by 1: adjoint pushes ones back off the right edge
        np.testing.assert_array_equal(vol.grad[0, 1], [[0, 1, 1]])


class TestShiftStack:
    def test_stack_replicates_image_per_level(self):
        img = t(row(1, 2, 3, 4).reshape(1, 1, 1, 4))
        levels = np.array([0.0, 2.0])
        out = shift_stack(img, levels, RTOL)
        assert out.shape == (1, 2, 1, 1, 4)
        np.testing.assert_array_equal(out.data[0, 0, 0], row(1, 2, 3, 4)[0, 0])
        np.testing.assert_array_equal(out.data[0, 1, 0], [[0, 0, 1, 2]])

    def test_multichannel_keeps_channels(self, rng):
        img = t(rng.normal(size=(2, 3, 4, 6)))
        out = shift_stack(img, np.array([0.0, 1.0, 2.5]), LTOR)
        assert out.shape == (2, 3, 3, 4, 6)
        np.testing.assert_array_equal(out.data[:, 0], img.data)

    def test_gradient_sums_over_levels(self):
        img = t(np.ones((1, 1, 1, 4)))
        with Tape() as tape:
            out = shift_stack(img, np.array([0.0, 0.0]), LTOR)
            tape.backward(out.sum())
        np.testing.assert_array_equal(img.grad, np.full((1, 1, 1, 4), 2.0))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 6), st.integers(0, 2 ** 32 - 1))
def test_integer_round_trip_preserves_interior(k, seed):
    """Shifting there and back loses only the border band, never interior values."""
    r = np.random.default_rng(seed)
    x = r.normal(size=(1, 1, 2, 12)).astype(np.float32)
    out = shift_sample(shift_sample(Tensor(x), float(k), LTOR), float(k), RTOL)
    if k < 12:
        np.testing.assert_array_equal(out.data[..., k:], x[..., k:])
    assert out.data[..., :k].sum() == 0.0
