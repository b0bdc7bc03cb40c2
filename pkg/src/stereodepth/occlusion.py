"""Occlusion masks from mutually warped disparity volumes.

Warping a normalized volume to the other view and summing its channels
measures how much probability mass lands on each destination pixel. Pixels
that receive no mass have no correspondence in the source view: they are
occluded there. The mask multiplies the two available estimates of that
mass (one volume from each input image) and clamps to [0, 1]; it is
computed on detached data and acts as a constant during backprop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, no_grad
from .volume import LEFT, RIGHT, DispVolume
from .warp import WarpDirection
from . import ops


@dataclass
class OcclusionMask:
    """Mask aligned to one view: 1 where content is visible in both views."""

    values: Tensor
    alignment: str


@dataclass
class MirroredDisparity:
    """Detached disparity from running the model in the opposite view convention."""

    values: Tensor


def occlusion_mask(vol_a: DispVolume, vol_b: DispVolume) -> OcclusionMask:
    """Mask for the view opposite to the two volumes' shared alignment.

    A left-aligned pair (the volume from the left input and the left-aligned
    volume derived from the right input) yields the right-view mask, and
    symmetrically for a right-aligned pair.
    """
    if vol_a.alignment != vol_b.alignment:
        raise ValueError(
            f"volume alignments differ: {vol_a.alignment!r} vs {vol_b.alignment!r}")
    if vol_a.warped or vol_b.warped:
        raise ValueError("occlusion masks need normalized (unwarped) volumes")
    if not np.array_equal(vol_a.levels.values, vol_b.levels.values):
        raise ValueError("volumes use different disparity level grids")
    if vol_a.probs.data.shape != vol_b.probs.data.shape:
        raise ValueError(
            f"volume shapes differ: {vol_a.probs.data.shape} vs {vol_b.probs.data.shape}")

    direction = (WarpDirection.LTOR if vol_a.alignment == LEFT
                 else WarpDirection.RTOL)
    with no_grad():
        masses = []
        for vol in (vol_a, vol_b):
            moved = vol.detach_probs().warp(direction)
            masses.append(moved.probs.sum(axis=1, keepdims=True))
        mask = (masses[0] * masses[1]).clamp(0.0, 1.0)
    dst = RIGHT if direction is WarpDirection.LTOR else LEFT
    return OcclusionMask(mask.detach(), dst)


def occlusion_masks(vol_ll: DispVolume, vol_lr: DispVolume,
                    vol_rr: DispVolume, vol_rl: DispVolume
                    ) -> tuple[OcclusionMask, OcclusionMask]:
    """(left mask, right mask) from the four per-view volumes.

    vol_ll / vol_lr are left-aligned volumes from the left / right inputs;
    vol_rr / vol_rl are the right-aligned ones from the right / left inputs.
    """
    o_right = occlusion_mask(vol_ll, vol_lr)
    o_left = occlusion_mask(vol_rr, vol_rl)
    return o_left, o_right


def ones_mask(shape, alignment: str, dtype=np.float32) -> OcclusionMask:
    return OcclusionMask(Tensor(np.ones(shape, dtype=dtype)), alignment)


def mask_coverage(mask: OcclusionMask) -> float:
    return float(mask.values.data.mean())


def mask_iou(mask: OcclusionMask, reference: np.ndarray,
             threshold: float = 0.5) -> float:
    """IoU of the occluded (below-threshold) regions against a binary map.

    Visible regions dominate most scenes, so the occluded set is the
    discriminative one to compare. Both empty means perfect agreement.
    """
    values = np.squeeze(mask.values.data)
    ref = np.squeeze(np.asarray(reference))
    if values.shape != ref.shape:
        raise ValueError(
            f"mask shape {values.shape} does not match reference {ref.shape}")
    pred_occ = values < threshold
    ref_occ = ref < threshold
    union = np.logical_or(pred_occ, ref_occ).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred_occ, ref_occ).sum() / union)


def mirrored_disparity(model, img: Tensor, levels=None,
                       input_alignment: str = LEFT) -> MirroredDisparity:
    """Run `model` with the image treated as the opposite-convention view.

    For a left image: mirror, run, mirror back (artifacts land on the other
    side of objects than the direct pass). For a right image the model's
    native left-view convention already is the opposite treatment, so it
    runs directly. The result never carries gradients.
    """
    if input_alignment not in (LEFT, RIGHT):
        raise ValueError(f"input_alignment must be 'left' or 'right', got {input_alignment!r}")
    with no_grad():
        if input_alignment == LEFT:
            d = ops.flip_w(model.predict_disparity(ops.flip_w(img), levels))
        else:
            d = model.predict_disparity(img, levels)
    return MirroredDisparity(d.detach())
