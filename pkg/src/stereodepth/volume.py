"""Disparity probability volumes and the ops defined over them.

A volume holds per-pixel channel probabilities over the disparity levels,
an alignment tag saying which view its pixel grid belongs to, and a flag
marking volumes whose channels were shifted after normalization. Warped
volumes are no longer per-pixel distributions (border truncation and
fold-over change the channel sums), so disparity regression rejects them.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import ops
from .autodiff import Tensor
from .levels import DisparityLevels
from .warp import WarpDirection, shift_stack, warp_volume

LEFT = "left"
RIGHT = "right"


@dataclass
class DispVolume:
    probs: Tensor
    levels: DisparityLevels
    alignment: str
    warped: bool = False

    def __post_init__(self):
        if self.alignment not in (LEFT, RIGHT):
            raise ValueError(f"alignment must be 'left' or 'right', got {self.alignment!r}")
        if self.probs.data.ndim != 4:
            raise ValueError(f"volume must be [B,L,H,W], got shape {self.probs.data.shape}")
        if self.probs.data.shape[1] != self.levels.count:
            raise ValueError(
                f"volume has {self.probs.data.shape[1]} channels for {self.levels.count} levels")
        if not self.warped:
            sums = self.probs.data.sum(axis=1)
            if not np.allclose(sums, 1.0, atol=1e-4):
                raise ValueError("volume channels must sum to 1 per pixel")

    def detach_probs(self) -> "DispVolume":
        return replace(self, probs=self.probs.detach())

    def warp(self, direction: WarpDirection) -> "DispVolume":
        """Move probability mass to the other view's pixel grid (post-normalization)."""
        if direction is WarpDirection.LTOR and self.alignment != LEFT:
            raise ValueError("LTOR warp needs a left-aligned volume")
        if direction is WarpDirection.RTOL and self.alignment != RIGHT:
            raise ValueError("RTOL warp needs a right-aligned volume")
        moved = warp_volume(self.probs, self.levels.values, direction)
        dst = RIGHT if direction is WarpDirection.LTOR else LEFT
        return replace(self, probs=moved, alignment=dst, warped=True)


def volume_from_logits(logits: Tensor, levels: DisparityLevels,
                       alignment: str) -> DispVolume:
    return DispVolume(ops.softmax_channels(logits), levels, alignment)


def disparity_from_volume(vol: DispVolume) -> Tensor:
    """Soft disparity regression: D = sum_n d_n * V_n, shape [B,1,H,W]."""
    if vol.warped:
        raise ValueError("cannot regress disparity from a warped volume")
    lv = Tensor(vol.levels.values.astype(vol.probs.data.dtype).reshape(1, -1, 1, 1))
    return (vol.probs * lv).sum(axis=1, keepdims=True)


def synthesize_view(src_img: Tensor, src_logits: Tensor, levels: DisparityLevels,
                    direction: WarpDirection = WarpDirection.LTOR
                    ) -> tuple[Tensor, DispVolume]:
    """Render the opposite view from one image plus its raw disparity logits.

    Logit channels are warped level-by-level first, the softmax runs on the
    warped logits (zero-filled borders enter the softmax as zeros), and the
    result weights a stack of per-level warps of the source image.
    Returns the synthesized image and the warped-alignment probability volume.
    """
    if src_img.data.ndim != 4 or src_logits.data.ndim != 4:
        raise ValueError("synthesize_view expects [B,C,H,W] image and [B,L,H,W] logits")
    if src_img.data.shape[0] != src_logits.data.shape[0] \
            or src_img.data.shape[2:] != src_logits.data.shape[2:]:
        raise ValueError(
            f"image {src_img.data.shape} and logits {src_logits.data.shape} do not align")
    if src_logits.data.shape[1] != levels.count:
        raise ValueError(
            f"logits have {src_logits.data.shape[1]} channels for {levels.count} levels")

    moved_logits = warp_volume(src_logits, levels.values, direction)
    probs = ops.softmax_channels(moved_logits)
    dst = RIGHT if direction is WarpDirection.LTOR else LEFT
    vol = DispVolume(probs, levels, dst)

    stack = shift_stack(src_img, levels.values, direction)        # [B,L,C,H,W]
    b, l, c, h, w = stack.data.shape
    weights = ops.reshape(probs, (b, l, 1, h, w))
    synth = (stack * weights).sum(axis=1)
    return synth, vol


def synth_right(left_img: Tensor, left_logits: Tensor,
                levels: DisparityLevels) -> tuple[Tensor, DispVolume]:
    """Right-view synthesis from the left image and left-aligned logits."""
    return synthesize_view(left_img, left_logits, levels, WarpDirection.LTOR)
