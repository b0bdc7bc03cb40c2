"""Horizontal epipolar warping for rectified stereo.

Disparity is d = x_L - x_R >= 0. Sampling left-aligned data at x + d
re-aligns it to the right view (LTOR); x - d goes the other way. Fractional
disparities interpolate linearly between the two straddling columns; samples
falling outside the frame read as zero, so warping never invents mass.
Gradients flow through the sampled array only; the shift amount is constant.
The adjoint of a shift is the same shift in the opposite direction, which is
what the backward closures apply.
"""

from __future__ import annotations

import enum
import math

import numpy as np

from .autodiff import Tensor, accumulate, record


class WarpDirection(enum.Enum):
    LTOR = "ltor"
    RTOL = "rtol"

    @property
    def sign(self) -> int:
        return 1 if self is WarpDirection.LTOR else -1

    def opposite(self) -> "WarpDirection":
        return WarpDirection.RTOL if self is WarpDirection.LTOR else WarpDirection.LTOR


def _check_disparity(d: float) -> float:
    d = float(d)
    if not math.isfinite(d):
        raise ValueError(f"disparity must be finite, got {d}")
    if d < 0.0:
        raise ValueError(f"disparity must be non-negative, got {d}")
    return d


def _take(a: np.ndarray, k: int) -> np.ndarray:
    """out[..., x] = a[..., x + k], zero-filled outside the frame."""
    w = a.shape[-1]
    buf = np.zeros_like(a)
    if k >= 0:
        if k < w:
            buf[..., :w - k] = a[..., k:]
    else:
        if -k < w:
            buf[..., -k:] = a[..., :w + k]
    return buf


def _shift(a: np.ndarray, d: float, sign: int) -> np.ndarray:
    """Sample a at x + sign*d along the last axis with linear interpolation."""
    s = sign * d
    i0 = math.floor(s)
    f = s - i0
    if f == 0.0:
        return _take(a, i0)
    out = _take(a, i0)
    out *= (1.0 - f)
    out += f * _take(a, i0 + 1)
    return out


def shift_sample(x: Tensor, d: float, direction: WarpDirection) -> Tensor:
    """Warp a [B, C, H, W] tensor by a single disparity."""
    d = _check_disparity(d)
    sign = direction.sign
    out = Tensor(_shift(x.data, d, sign))

    def backward(g):
        accumulate(x, _shift(g, d, -sign))

    return record(out, (x,), backward)


def warp_volume(vol: Tensor, levels: np.ndarray, direction: WarpDirection) -> Tensor:
    """Warp channel n of a [B, L, H, W] volume by levels[n]."""
    levels = np.asarray(levels, dtype=np.float64)
    if levels.ndim != 1 or vol.data.ndim != 4 or vol.data.shape[1] != levels.shape[0]:
        raise ValueError(
            f"warp_volume: volume channels {vol.data.shape} do not match {levels.shape[0]} levels")
    ds = [_check_disparity(d) for d in levels]
    sign = direction.sign
    buf = np.empty_like(vol.data)
    for n, d in enumerate(ds):
        buf[:, n] = _shift(vol.data[:, n], d, sign)
    out = Tensor(buf)

    def backward(g):
        gv = np.empty_like(g)
        for n, d in enumerate(ds):
            gv[:, n] = _shift(g[:, n], d, -sign)
        accumulate(vol, gv)

    return record(out, (vol,), backward)


def shift_stack(img: Tensor, levels: np.ndarray, direction: WarpDirection) -> Tensor:
    """Stack per-level warps of a [B, C, H, W] image into [B, L, C, H, W]."""
    levels = np.asarray(levels, dtype=np.float64)
    ds = [_check_disparity(d) for d in levels]
    sign = direction.sign
    b, c, h, w = img.data.shape
    buf = np.empty((b, len(ds), c, h, w), dtype=img.data.dtype)
    for n, d in enumerate(ds):
        buf[:, n] = _shift(img.data, d, sign)
    out = Tensor(buf)

    def backward(g):
        gx = np.zeros_like(img.data)
        for n, d in enumerate(ds):
            gx += _shift(g[:, n], d, -sign)
        accumulate(img, gx)

    return record(out, (img,), backward)
