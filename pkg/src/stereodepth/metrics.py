"""Depth evaluation suite and inference-time disparity post-processing.

Errors follow the standard monocular-depth protocol: per-image metrics over
valid pixels (0 < gt <= cap) with predictions clamped to (cap * 1e-3, cap],
averaged across the evaluation set. Threshold accuracies use the strict
max(p/g, g/p) < 1.25**i test. Optional median scaling multiplies each
prediction by median(gt)/median(pred) before clamping.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .augment import resize_bilinear
from .autodiff import Tensor, no_grad

METRIC_NAMES = ("abs_rel", "sq_rel", "rmse", "rmse_log", "a1", "a2", "a3")
PP_MODES = ("none", "flip", "multiscale-flip")
PP_SCALES = (0.75, 1.0, 1.25)


@dataclass(frozen=True)
class EvalReport:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    a1: float
    a2: float
    a3: float
    n_images: int
    cap: float
    median_scaling: bool

    def values(self) -> tuple[float, ...]:
        return tuple(getattr(self, k) for k in METRIC_NAMES)

    def format_table(self) -> str:
        head = " | ".join(f"{k:>8}" for k in METRIC_NAMES)
        vals = " | ".join(f"{v:8.4f}" for v in self.values())
        meta = (f"images={self.n_images} cap={self.cap:g} "
                f"median_scaling={'on' if self.median_scaling else 'off'}")
        return f"{head}\n{vals}\n{meta}"

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(list(METRIC_NAMES) + ["n_images", "cap", "median_scaling"])
            writer.writerow([repr(v) for v in self.values()]
                            + [self.n_images, self.cap, int(self.median_scaling)])


def image_errors(gt: np.ndarray, pred: np.ndarray, cap: float,
                 median_scaling: bool = False) -> tuple[float, ...]:
    """Metric tuple for one depth map pair."""
    gt = np.asarray(gt, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if gt.shape != pred.shape:
        raise ValueError(f"gt shape {gt.shape} != pred shape {pred.shape}")
    if not (np.isfinite(cap) and cap > 0):
        raise ValueError(f"cap must be positive, got {cap}")
    valid = (gt > 0) & (gt <= cap)
    if not np.any(valid):
        raise ValueError("no valid ground-truth pixels under the cap")
    g = gt[valid]
    p = pred[valid]
    if median_scaling:
        med = np.median(p)
        if med <= 0:
            raise ValueError("median scaling needs positive prediction median")
        p = p * (np.median(g) / med)
    p = np.clip(p, cap * 1e-3, cap)

    thresh = np.maximum(p / g, g / p)
    diff = p - g
    return (
        float(np.mean(np.abs(diff) / g)),
        float(np.mean(diff * diff / g)),
        float(np.sqrt(np.mean(diff * diff))),
        float(np.sqrt(np.mean(np.log(p / g) ** 2))),
        float(np.mean(thresh < 1.25)),
        float(np.mean(thresh < 1.25 ** 2)),
        float(np.mean(thresh < 1.25 ** 3)),
    )


def evaluate(gt_maps: list[np.ndarray], pred_maps: list[np.ndarray], cap: float,
             median_scaling: bool = False) -> EvalReport:
    """Average per-image metrics over an evaluation set."""
    if len(gt_maps) != len(pred_maps):
        raise ValueError(f"{len(gt_maps)} gt maps vs {len(pred_maps)} predictions")
    if not gt_maps:
        raise ValueError("empty evaluation set")
    acc = np.zeros(len(METRIC_NAMES), dtype=np.float64)
    for g, p in zip(gt_maps, pred_maps):
        acc += np.asarray(image_errors(g, p, cap, median_scaling))
    acc /= len(gt_maps)
    return EvalReport(*acc.tolist(), n_images=len(gt_maps), cap=float(cap),
                      median_scaling=median_scaling)


def _ramp_masks(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    xs = np.linspace(0.0, 1.0, w, dtype=np.float64)[None, :]
    left_band = 1.0 - np.clip(20.0 * (xs - 0.05), 0.0, 1.0)   # 1 on left 5%, 0 past 10%
    right_band = left_band[:, ::-1]
    return np.broadcast_to(left_band, (h, w)), np.broadcast_to(right_band, (h, w))


def flip_merge(direct: np.ndarray, mirrored: np.ndarray) -> np.ndarray:
    """Blend direct and mirrored predictions with 5%-width edge ramps.

    Direct passes degrade near the left frame band, mirrored ones near the
    right, so the mirrored estimate owns the left edge, the direct one the
    right edge, and the interior averages the two.
    """
    h, w = direct.shape
    lmask, rmask = _ramp_masks(h, w)
    mean = 0.5 * (direct + mirrored)
    return rmask * direct + lmask * mirrored + (1.0 - lmask - rmask) * mean


def _predict_np(model, levels, img_chw: np.ndarray) -> np.ndarray:
    with no_grad():
        d = model.predict_disparity(Tensor(img_chw[None].astype(np.float32)), levels)
    return d.data[0, 0].astype(np.float64)


def postprocess_disparity(model, levels, img_chw: np.ndarray,
                          mode: str = "flip") -> np.ndarray:
    """Inference disparity for one [3, H, W] image under a postprocess mode."""
    if mode not in PP_MODES:
        raise ValueError(f"unknown postprocess mode {mode!r}, expected one of {PP_MODES}")
    h, w = img_chw.shape[-2], img_chw.shape[-1]
    if mode == "none":
        return _predict_np(model, levels, img_chw)

    def flip_pp(img, lev):
        direct = _predict_np(model, lev, img)
        mirrored = _predict_np(model, lev, img[..., ::-1].copy())[:, ::-1]
        return flip_merge(direct, mirrored)

    if mode == "flip":
        return flip_pp(img_chw, levels)

    mult = model.config.spatial_multiple
    acc = np.zeros((h, w), dtype=np.float64)
    used = 0
    for s in PP_SCALES:
        sh, sw = int(round(h * s)), int(round(w * s))
        if sh % mult or sw % mult:
            warnings.warn(
                f"postprocess scale {s} gives {sh}x{sw}, not a multiple of {mult}; skipped")
            continue
        scaled = img_chw if s == 1.0 else resize_bilinear(img_chw, sh, sw)
        # the net reports disparity in its own pixel units at the scaled size;
        # spatial resize back needs the matching value rescale w/sw
        d = flip_pp(scaled.astype(np.float32), levels)
        acc += resize_bilinear(d, h, w) * (w / sw)
        used += 1
    if used == 0:
        raise ValueError("all postprocess scales were skipped")
    return acc / used


def psnr(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None,
         peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, optionally over mask-1 pixels only.

    A [H, W] mask broadcasts over channels. Identical inputs report inf.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    sq = (a - b) ** 2
    if mask is not None:
        keep = np.broadcast_to(np.asarray(mask, dtype=bool), sq.shape)
        if not keep.any():
            raise ValueError("mask selects no pixels")
        sq = sq[keep]
    mse = float(sq.mean())
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))
