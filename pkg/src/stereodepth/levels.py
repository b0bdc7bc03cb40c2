"""Disparity discretization grids and disparity/depth conversion.

Levels index n = 0..N with N = count-1. The exponential grid is
d_n = d_max * exp(ln(d_max/d_min) * (n/N - 1)), a geometric progression from
d_min to d_max that spends most of its levels on small disparities (far
scene content). The linear grid is the uniform baseline over the same range.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

EXPONENTIAL = "exponential"
LINEAR = "linear"
MODES = (EXPONENTIAL, LINEAR)


@dataclass(frozen=True)
class CameraModel:
    """Rectified stereo intrinsics reduced to what depth conversion needs."""

    baseline_times_focal: float
    depth_cap: float

    def __post_init__(self):
        if not (math.isfinite(self.baseline_times_focal) and self.baseline_times_focal > 0):
            raise ValueError(f"baseline_times_focal must be positive, got {self.baseline_times_focal}")
        if not (math.isfinite(self.depth_cap) and self.depth_cap > 0):
            raise ValueError(f"depth_cap must be positive, got {self.depth_cap}")


@dataclass(frozen=True)
class DisparityLevels:
    values: np.ndarray
    mode: str
    d_min: float
    d_max: float

    @property
    def count(self) -> int:
        return int(self.values.shape[0])

    @property
    def geometric_mean(self) -> float:
        return math.sqrt(self.d_min * self.d_max)

    @property
    def default_floor(self) -> float:
        return self.d_min / 2.0

    def scaled(self, factor: float) -> "DisparityLevels":
        """Levels for an image resized by `factor` (disparity is proportional to width)."""
        if not (math.isfinite(factor) and factor > 0):
            raise ValueError(f"scale factor must be positive, got {factor}")
        return DisparityLevels(self.values * factor, self.mode,
                               self.d_min * factor, self.d_max * factor)


def make_levels(count: int, d_min: float = 2.0, d_max: float = 300.0,
                mode: str = EXPONENTIAL) -> DisparityLevels:
    if count < 2:
        raise ValueError(f"need at least 2 levels, got {count}")
    if not (math.isfinite(d_min) and math.isfinite(d_max)) or not (0 < d_min < d_max):
        raise ValueError(f"need 0 < d_min < d_max, got d_min={d_min} d_max={d_max}")
    if mode not in MODES:
        raise ValueError(f"unknown level mode {mode!r}, expected one of {MODES}")
    n_max = count - 1
    if mode == EXPONENTIAL:
        n = np.arange(count, dtype=np.float64)
        values = d_max * np.exp(math.log(d_max / d_min) * (n / n_max - 1.0))
        # exp(log(r))*d rounds off by an ulp; the endpoints are exact by definition
        values[0] = d_min
        values[-1] = d_max
    else:
        values = np.linspace(d_min, d_max, count, dtype=np.float64)
    if not np.all(np.diff(values) > 0):
        raise ValueError("levels must be strictly increasing")
    return DisparityLevels(values, mode, float(d_min), float(d_max))


def disparity_to_depth(disparity: np.ndarray, camera: CameraModel,
                       floor: float) -> np.ndarray:
    """bf / disparity with a positive disparity floor and a depth cap."""
    if not (math.isfinite(floor) and floor > 0):
        raise ValueError(f"disparity floor must be positive, got {floor}")
    d = np.maximum(np.asarray(disparity, dtype=np.float64), floor)
    return np.minimum(camera.baseline_times_focal / d, camera.depth_cap)


def depth_to_disparity(depth: np.ndarray, camera: CameraModel) -> np.ndarray:
    z = np.asarray(depth, dtype=np.float64)
    if np.any(z <= 0):
        raise ValueError("depth must be positive")
    return camera.baseline_times_focal / z


def write_level_curves(path, level_sets: list[DisparityLevels],
                       camera: CameraModel) -> None:
    """Dump (mode, count, index, disparity, depth) rows for plotting level allocation."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "count", "index", "disparity", "depth"])
        for levels in level_sets:
            for n, d in enumerate(levels.values):
                writer.writerow([levels.mode, levels.count, n,
                                 repr(float(d)),
                                 repr(float(camera.baseline_times_focal / d))])
