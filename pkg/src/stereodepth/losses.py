"""Training objectives: masked reconstruction, edge-aware smoothness, mirror.

All reductions are means over every pixel, masked or not, so loss magnitudes
are comparable across mask coverages and image sizes. The total averages the
left-view and right-view branches (the network runs on both images of a
pair) and scales the smoothness terms by alpha_ds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .autodiff import Tensor
from .occlusion import MirroredDisparity, OcclusionMask

ALPHA_DS_STEP1 = 0.0008
ALPHA_DS_STEP2 = 0.0016
ALPHA_PERCEPTUAL = 0.01
GAMMA_EDGE = 2.0


@dataclass(frozen=True)
class LossWeights:
    alpha_ds: float
    alpha_p: float = 0.0
    gamma: float = GAMMA_EDGE

    @staticmethod
    def for_step(step: int, with_perceptual: bool = False) -> "LossWeights":
        if step not in (1, 2):
            raise ValueError(f"training step must be 1 or 2, got {step}")
        return LossWeights(
            alpha_ds=ALPHA_DS_STEP1 if step == 1 else ALPHA_DS_STEP2,
            alpha_p=ALPHA_PERCEPTUAL if with_perceptual else 0.0)


class FeatureExtractor:
    """Fixed random strided conv pyramid standing in for a pretrained encoder.

    Three levels of stride-2 3x3 convs with ReLU, seed-initialized and frozen.
    Gradients flow through it to the image being compared, never into it.
    """

    def __init__(self, seed: int = 0, in_channels: int = 3,
                 widths: tuple[int, ...] = (8, 16, 32)):
        rng = np.random.default_rng([seed, 0xFEA7])
        self.widths = widths
        self.layers = []
        cin = in_channels
        for cout in widths:
            std = float(np.sqrt(2.0 / (cin * 9)))
            w = Tensor(rng.normal(0.0, std, size=(cout, cin, 3, 3)).astype(np.float32))
            b = Tensor(np.zeros(cout, dtype=np.float32))
            self.layers.append((w, b))
            cin = cout

    def __call__(self, img: Tensor) -> list[Tensor]:
        feats = []
        x = img
        for w, b in self.layers:
            wc, bc = w, b
            if x.data.dtype != w.data.dtype:
                wc = Tensor(w.data.astype(x.data.dtype))
                bc = Tensor(b.data.astype(x.data.dtype))
            x = ops.conv2d(x, wc, bc, stride=2, padding=1).relu()
            feats.append(x)
        return feats


def _check_image_pair(a: Tensor, b: Tensor, what: str) -> None:
    if a.data.shape != b.data.shape:
        raise ValueError(f"{what}: shapes {a.data.shape} and {b.data.shape} differ")


def _check_mask(mask: OcclusionMask, img: Tensor) -> None:
    ms, xs = mask.values.data.shape, img.data.shape
    if ms[0] != xs[0] or ms[1] != 1 or ms[2:] != xs[2:]:
        raise ValueError(f"mask shape {ms} does not broadcast over image {xs}")


def reconstruction_loss(synth: Tensor, target: Tensor, mask: OcclusionMask,
                        extractor: FeatureExtractor | None = None,
                        alpha_p: float = 0.0) -> Tensor:
    """Masked L1 plus optional perceptual distance on the mask-blended image."""
    _check_image_pair(synth, target, "reconstruction_loss")
    _check_mask(mask, synth)
    m = mask.values
    loss = (m * (synth - target)).abs().mean()
    if alpha_p > 0.0:
        if extractor is None:
            raise ValueError("alpha_p > 0 requires a feature extractor")
        blend = m * synth + (1.0 - m) * target
        for fb, ft in zip(extractor(blend), extractor(target)):
            diff = fb - ft
            loss = loss + alpha_p * (diff * diff).mean()
    return loss


def smoothness_loss(disp: Tensor, img: Tensor, gamma: float = GAMMA_EDGE) -> Tensor:
    """Disparity gradients attenuated where the image has edges.

    Forward differences drop the last column (x) or row (y); a dimension of
    size 1 contributes nothing in that direction.
    """
    ds, xs = disp.data.shape, img.data.shape
    if ds[0] != xs[0] or ds[1] != 1 or ds[2:] != xs[2:]:
        raise ValueError(f"disparity shape {ds} does not match image {xs}")
    gamma = float(gamma)
    terms = None
    if ds[3] > 1:
        wx = (ops.grad_x(img).abs().mean(axis=1, keepdims=True) * -gamma).exp()
        terms = (ops.grad_x(disp).abs() * wx).mean()
    if ds[2] > 1:
        wy = (ops.grad_y(img).abs().mean(axis=1, keepdims=True) * -gamma).exp()
        ty = (ops.grad_y(disp).abs() * wy).mean()
        terms = ty if terms is None else terms + ty
    if terms is None:
        raise ValueError("smoothness_loss needs at least one spatial dim > 1")
    return terms


def mirror_loss(disp: Tensor, mirrored: MirroredDisparity,
                mask: OcclusionMask) -> Tensor:
    """Pull occluded-region disparity toward the opposite-convention pass.

    Normalized by each image's maximum mirrored disparity so the term is
    scale-free; weighted by 1 - mask, so it only acts where reconstruction
    cannot supervise.
    """
    dm = mirrored.values
    _check_image_pair(disp, dm, "mirror_loss")
    _check_mask(mask, disp)
    per_image_max = dm.data.max(axis=(1, 2, 3))
    if np.any(per_image_max <= 0.0):
        raise ValueError("mirrored disparity must have a positive per-image maximum")
    inv = Tensor((1.0 / per_image_max).astype(dm.data.dtype).reshape(-1, 1, 1, 1))
    diff = ((1.0 - mask.values) * (disp - dm)).abs()
    return (inv * diff).mean()


def total_loss(rec_left: Tensor, rec_right: Tensor,
               mirror_left: Tensor, mirror_right: Tensor,
               smooth_left: Tensor, smooth_right: Tensor,
               alpha_ds: float) -> Tensor:
    """Average the per-view sums of reconstruction, mirror, and weighted smoothness."""
    alpha_ds = float(alpha_ds)
    return (rec_left + rec_right + mirror_left + mirror_right
            + alpha_ds * smooth_left + alpha_ds * smooth_right) * 0.5
