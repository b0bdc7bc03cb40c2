"""Stereo-consistent training augmentation.

Resize scales ground-truth disparity by the actual horizontal factor;
horizontal flip swaps the views (the mirrored right image becomes the new
left) along with their ground-truth maps, so applying it twice restores the
sample; photometric jitter uses identical parameters for both views.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .scenes import StereoSample


@dataclass(frozen=True)
class AugmentConfig:
    crop_h: int
    crop_w: int
    resize_range: tuple[float, float] = (0.75, 1.5)
    hflip_prob: float = 0.5
    gamma_range: tuple[float, float] = (0.8, 1.2)
    brightness_range: tuple[float, float] = (0.8, 1.2)
    color_range: tuple[float, float] = (0.95, 1.05)

    def __post_init__(self):
        for name in ("resize_range", "gamma_range", "brightness_range", "color_range"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise ValueError(f"{name} must satisfy 0 < lo <= hi, got ({lo}, {hi})")
        if not (0.0 <= self.hflip_prob <= 1.0):
            raise ValueError(f"hflip_prob must be in [0,1], got {self.hflip_prob}")
        if self.crop_h < 1 or self.crop_w < 1:
            raise ValueError("crop dims must be positive")


def identity_config(h: int, w: int) -> AugmentConfig:
    return AugmentConfig(crop_h=h, crop_w=w, resize_range=(1.0, 1.0),
                         hflip_prob=0.0, gamma_range=(1.0, 1.0),
                         brightness_range=(1.0, 1.0), color_range=(1.0, 1.0))


def resize_bilinear(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Plain numpy bilinear resize of [..., H, W]; not differentiable."""
    h, w = arr.shape[-2], arr.shape[-1]
    if (h, w) == (out_h, out_w):
        return arr.copy()

    def axis_idx(n_in, n_out):
        pos = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        i0 = np.floor(pos).astype(np.int64)
        f = pos - i0
        return np.clip(i0, 0, n_in - 1), np.clip(i0 + 1, 0, n_in - 1), f

    r0, r1, rf = axis_idx(h, out_h)
    c0, c1, cf = axis_idx(w, out_w)
    rf = rf.reshape(-1, 1).astype(arr.dtype)
    cf = cf.astype(arr.dtype)
    rows = arr[..., r0, :] * (1 - rf) + arr[..., r1, :] * rf
    return rows[..., c0] * (1 - cf) + rows[..., c1] * cf


def resize_nearest(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = arr.shape[-2], arr.shape[-1]
    ri = np.minimum(((np.arange(out_h) + 0.5) * (h / out_h)).astype(np.int64), h - 1)
    ci = np.minimum(((np.arange(out_w) + 0.5) * (w / out_w)).astype(np.int64), w - 1)
    return arr[..., ri, :][..., ci]


def hflip_sample(s: StereoSample) -> StereoSample:
    """Swap views and mirror everything; an involution."""
    flip = lambda a: None if a is None else np.ascontiguousarray(a[..., ::-1])
    return StereoSample(
        left=flip(s.right), right=flip(s.left),
        gt_disparity_L=flip(s.gt_disparity_R), gt_disparity_R=flip(s.gt_disparity_L),
        gt_occlusion_L=flip(s.gt_occlusion_R), gt_occlusion_R=flip(s.gt_occlusion_L),
        camera=s.camera)


def resize_sample(s: StereoSample, out_h: int, out_w: int) -> StereoSample:
    fx = out_w / s.left.shape[-1]
    scale_disp = lambda a: None if a is None else \
        (resize_bilinear(a, out_h, out_w) * np.float32(fx)).astype(np.float32)
    occ = lambda a: None if a is None else resize_nearest(a, out_h, out_w)
    return StereoSample(
        left=resize_bilinear(s.left, out_h, out_w).astype(np.float32),
        right=resize_bilinear(s.right, out_h, out_w).astype(np.float32),
        gt_disparity_L=scale_disp(s.gt_disparity_L),
        gt_disparity_R=scale_disp(s.gt_disparity_R),
        gt_occlusion_L=occ(s.gt_occlusion_L), gt_occlusion_R=occ(s.gt_occlusion_R),
        camera=s.camera)


def crop_sample(s: StereoSample, top: int, left: int, ch: int, cw: int) -> StereoSample:
    h, w = s.left.shape[-2], s.left.shape[-1]
    if top < 0 or left < 0 or top + ch > h or left + cw > w:
        raise ValueError(f"crop {ch}x{cw} at ({top},{left}) exceeds image {h}x{w}")
    cut = lambda a: None if a is None else \
        np.ascontiguousarray(a[..., top:top + ch, left:left + cw])
    return StereoSample(
        left=cut(s.left), right=cut(s.right),
        gt_disparity_L=cut(s.gt_disparity_L), gt_disparity_R=cut(s.gt_disparity_R),
        gt_occlusion_L=cut(s.gt_occlusion_L), gt_occlusion_R=cut(s.gt_occlusion_R),
        camera=s.camera)


def jitter_views(s: StereoSample, gamma: float, brightness: float,
                 color: np.ndarray) -> StereoSample:
    col = np.asarray(color, dtype=np.float32).reshape(3, 1, 1)

    def apply(img):
        out = np.power(img, np.float32(gamma)) * np.float32(brightness) * col
        return np.clip(out, 0.0, 1.0).astype(np.float32)

    return replace(s, left=apply(s.left), right=apply(s.right))


def augment_sample(s: StereoSample, cfg: AugmentConfig,
                   rng: np.random.Generator) -> StereoSample:
    """Resize, crop, flip, jitter with parameters drawn from `rng`."""
    h, w = s.left.shape[-2], s.left.shape[-1]
    f = float(rng.uniform(*cfg.resize_range))
    out_h = max(cfg.crop_h, int(round(h * f)))
    out_w = max(cfg.crop_w, int(round(w * f)))
    if (out_h, out_w) != (h, w):
        s = resize_sample(s, out_h, out_w)
    top = int(rng.integers(0, out_h - cfg.crop_h + 1))
    left = int(rng.integers(0, out_w - cfg.crop_w + 1))
    if (out_h, out_w) != (cfg.crop_h, cfg.crop_w):
        s = crop_sample(s, top, left, cfg.crop_h, cfg.crop_w)
    if rng.uniform() < cfg.hflip_prob:
        s = hflip_sample(s)
    gamma = float(rng.uniform(*cfg.gamma_range))
    brightness = float(rng.uniform(*cfg.brightness_range))
    color = rng.uniform(*cfg.color_range, size=3)
    if cfg.gamma_range != (1.0, 1.0) or cfg.brightness_range != (1.0, 1.0) \
            or cfg.color_range != (1.0, 1.0):
        s = jitter_views(s, gamma, brightness, color)
    return s
