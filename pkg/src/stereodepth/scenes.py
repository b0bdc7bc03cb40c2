"""Procedural fronto-parallel stereo scenes with exact geometry ground truth.

A scene is a stack of textured rectangles, each at a constant disparity
(nearer layers have strictly larger disparity). Both views are composited
with the painter's algorithm; textures are anchored to the layer surface, so
for integer disparities the rendered pair satisfies
I_R(x) = I_L(x + d) exactly wherever the right-view pixel is visible in both
views. Visibility masks come from splatting each source pixel to the other
view: a right-view pixel is occluded iff no left-view pixel lands on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Tensor
from .levels import CameraModel, DisparityLevels
from .volume import LEFT, RIGHT, DispVolume

TEXTURE_KINDS = ("gradient", "noise", "checker")


@dataclass(frozen=True)
class Texture:
    kind: str
    rgb0: tuple[float, float, float] = (0.1, 0.1, 0.1)
    rgb1: tuple[float, float, float] = (0.9, 0.9, 0.9)
    axis: str = "x"
    cell: int = 6
    seed: int = 0

    def __post_init__(self):
        if self.kind not in TEXTURE_KINDS:
            raise ValueError(f"unknown texture kind {self.kind!r}")
        if self.axis not in ("x", "y"):
            raise ValueError(f"gradient axis must be 'x' or 'y', got {self.axis!r}")
        if self.cell < 1:
            raise ValueError(f"texture cell must be >= 1, got {self.cell}")


@dataclass(frozen=True)
class Layer:
    """Rectangle [x0, x1) x [y0, y1) in left-view pixels; may exceed the frame."""

    x0: int
    y0: int
    x1: int
    y1: int
    disparity: float
    texture: Texture

    def __post_init__(self):
        if self.x1 <= self.x0 or self.y1 <= self.y0:
            raise ValueError(f"empty layer extent {(self.x0, self.y0, self.x1, self.y1)}")
        if not (math.isfinite(self.disparity) and self.disparity > 0):
            raise ValueError(f"layer disparity must be positive and finite, got {self.disparity}")


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    layers: tuple[Layer, ...]
    camera: CameraModel
    seed: int = 0

    def __post_init__(self):
        if self.width < 4 or self.height < 4:
            raise ValueError(f"scene must be at least 4x4, got {self.width}x{self.height}")
        if len(self.layers) == 0:
            raise ValueError("scene needs at least one layer")
        ds = [lay.disparity for lay in self.layers]
        if len(set(ds)) != len(ds):
            raise ValueError("layer disparities must be pairwise distinct")


@dataclass
class StereoSample:
    left: np.ndarray
    right: np.ndarray
    gt_disparity_L: np.ndarray | None = None
    gt_occlusion_L: np.ndarray | None = None
    gt_occlusion_R: np.ndarray | None = None
    camera: CameraModel | None = None
    gt_disparity_R: np.ndarray | None = None


def texture_image(tex: Texture, h: int, w: int, rng_key: tuple) -> np.ndarray:
    """[3, h, w] texture in [0, 1], deterministic in (texture, size, rng_key)."""
    c0 = np.asarray(tex.rgb0, dtype=np.float32).reshape(3, 1, 1)
    c1 = np.asarray(tex.rgb1, dtype=np.float32).reshape(3, 1, 1)
    if tex.kind == "gradient":
        n = w if tex.axis == "x" else h
        t = np.linspace(0.0, 1.0, n, dtype=np.float32)
        t = t.reshape(1, 1, w) if tex.axis == "x" else t.reshape(1, h, 1)
        return (c0 + t * (c1 - c0)) * np.ones((3, h, w), dtype=np.float32)
    if tex.kind == "checker":
        yy, xx = np.mgrid[0:h, 0:w]
        par = ((yy // tex.cell + xx // tex.cell) % 2).astype(np.float32)
        return c0 + par[None] * (c1 - c0)
    # value noise: random grid at cell resolution, bilinear between grid points
    rng = np.random.default_rng(list(rng_key) + [tex.seed])
    gh, gw = h // tex.cell + 2, w // tex.cell + 2
    grid = rng.uniform(0.0, 1.0, size=(3, gh, gw)).astype(np.float32)
    ys = np.arange(h, dtype=np.float32) / tex.cell
    xs = np.arange(w, dtype=np.float32) / tex.cell
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    fy = (ys - y0)[None, :, None]
    fx = (xs - x0)[None, None, :]
    g00 = grid[:, y0][:, :, x0]
    g01 = grid[:, y0][:, :, x0 + 1]
    g10 = grid[:, y0 + 1][:, :, x0]
    g11 = grid[:, y0 + 1][:, :, x0 + 1]
    val = (g00 * (1 - fx) + g01 * fx) * (1 - fy) + (g10 * (1 - fx) + g11 * fx) * fy
    lo = np.asarray(tex.rgb0, np.float32).reshape(3, 1, 1)
    hi = np.asarray(tex.rgb1, np.float32).reshape(3, 1, 1)
    return lo + val * (hi - lo)


def _paint(img: np.ndarray, disp: np.ndarray, tex_img: np.ndarray,
           x_off: float, y0: int, y1: int, d: float) -> None:
    """Composite one layer into a view whose layer origin column is x_off."""
    h, w = img.shape[1], img.shape[2]
    tw = tex_img.shape[2]
    ya, yb = max(0, y0), min(h, y1)
    if ya >= yb:
        return
    xs = np.arange(w, dtype=np.float64)
    u = xs - x_off
    valid = (u >= 0.0) & (u <= tw - 1 + 1e-9)
    if not np.any(valid):
        return
    uv = u[valid]
    i0 = np.clip(np.floor(uv).astype(np.int64), 0, tw - 1)
    i1 = np.minimum(i0 + 1, tw - 1)
    f = (uv - i0).astype(np.float32)
    va, vb = ya - y0, yb - y0  # texture row v maps to frame row y0 + v
    cols = tex_img[:, va:vb, :]
    sampled = cols[:, :, i0] * (1.0 - f) + cols[:, :, i1] * f
    img[:, ya:yb, valid] = sampled
    disp[ya:yb, valid] = d


def _occlusion_from_splat(disp_src: np.ndarray, width: int) -> np.ndarray:
    """1 where some source-view pixel maps to this destination column."""
    h = disp_src.shape[0]
    occ = np.zeros((h, width), dtype=np.uint8)
    cols = np.arange(disp_src.shape[1])
    for y in range(h):
        t = np.rint(cols - disp_src[y]).astype(np.int64)
        t = t[(t >= 0) & (t < width)]
        occ[y, t] = 1
    return occ


def render(spec: SceneSpec) -> StereoSample:
    h, w = spec.height, spec.width
    left = np.zeros((3, h, w), dtype=np.float32)
    right = np.zeros((3, h, w), dtype=np.float32)
    disp_l = np.zeros((h, w), dtype=np.float32)
    disp_r = np.zeros((h, w), dtype=np.float32)

    order = sorted(range(len(spec.layers)), key=lambda i: spec.layers[i].disparity)
    for idx in order:                              # far to near
        lay = spec.layers[idx]
        tex = texture_image(lay.texture, lay.y1 - lay.y0, lay.x1 - lay.x0,
                            (spec.seed, idx))
        _paint(left, disp_l, tex, float(lay.x0), lay.y0, lay.y1, lay.disparity)
        _paint(right, disp_r, tex, float(lay.x0) - lay.disparity,
               lay.y0, lay.y1, lay.disparity)

    # occ_R: splat left pixels to x - d; occ_L: splat right pixels to x + d
    occ_r = _occlusion_from_splat(disp_l, w)
    occ_l = _occlusion_from_splat(-disp_r, w)
    return StereoSample(left=left, right=right,
                        gt_disparity_L=disp_l, gt_disparity_R=disp_r,
                        gt_occlusion_L=occ_l, gt_occlusion_R=occ_r,
                        camera=spec.camera)


def nearest_level_index(disp: np.ndarray, levels: DisparityLevels) -> np.ndarray:
    """Snap disparities to level indices; midpoints resolve to the lower index."""
    d = np.asarray(disp, dtype=np.float64)
    lo, hi = levels.values[0], levels.values[-1]
    if np.any(d < lo - 1e-6) or np.any(d > hi + 1e-6):
        bad = d[(d < lo - 1e-6) | (d > hi + 1e-6)].flat[0]
        raise ValueError(f"disparity {bad} outside level range [{lo}, {hi}]")
    mids = 0.5 * (levels.values[:-1] + levels.values[1:])
    return np.searchsorted(mids, d, side="left")


def one_hot_volume(disp: np.ndarray, levels: DisparityLevels, alignment: str,
                   interpolated: bool = False, dtype=np.float32) -> DispVolume:
    """Ground-truth volume for a [H, W] disparity map, batch dim of 1.

    Nearest mode puts all mass on the closest level; interpolated mode splits
    it linearly between the two straddling levels so that disparity
    regression reconstructs the input exactly.
    """
    d = np.asarray(disp, dtype=np.float64)
    if d.ndim != 2:
        raise ValueError(f"disparity map must be [H,W], got {d.shape}")
    h, w = d.shape
    vol = np.zeros((1, levels.count, h, w), dtype=dtype)
    yy, xx = np.mgrid[0:h, 0:w]
    if not interpolated:
        idx = nearest_level_index(d, levels)
        vol[0, idx, yy, xx] = 1.0
    else:
        nearest_level_index(d, levels)  # range validation
        k = np.clip(np.searchsorted(levels.values, d, side="right") - 1,
                    0, levels.count - 2)
        gap = levels.values[k + 1] - levels.values[k]
        wk = ((levels.values[k + 1] - d) / gap).astype(dtype)
        vol[0, k, yy, xx] = wk
        vol[0, k + 1, yy, xx] += (1.0 - wk).astype(dtype)
    return DispVolume(Tensor(vol), levels, alignment)


def gt_logit_volume(disp: np.ndarray, levels: DisparityLevels,
                    base: float = 40.0, slope: float = 20.0) -> Tensor:
    """Raw logits whose warp-then-softmax reproduces z-buffer ordering.

    The hot level of each pixel carries logit base + slope*n; when warps from
    two surfaces land on the same destination pixel, the nearer surface
    (larger level index) dominates the softmax instead of tying.
    """
    idx = nearest_level_index(disp, levels)
    h, w = idx.shape
    vol = np.zeros((1, levels.count, h, w), dtype=np.float32)
    yy, xx = np.mgrid[0:h, 0:w]
    vol[0, idx, yy, xx] = (base + slope * idx).astype(np.float32)
    return Tensor(vol)


@dataclass(frozen=True)
class BankSpec:
    """Parameters for a procedurally generated bank of layered scenes."""

    seed: int
    count: int
    width: int = 96
    height: int = 64
    baseline_times_focal: float = 80.0
    depth_cap: float = 80.0
    d_background: tuple[float, float] = (1.2, 3.0)
    d_foreground: tuple[float, float] = (6.0, 15.0)
    n_foreground: tuple[int, int] = (1, 2)
    integer_disparities: bool = False
    texture_kinds: tuple[str, ...] = ("noise", "gradient", "checker")

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("bank needs count >= 1")
        for kind in self.texture_kinds:
            if kind not in TEXTURE_KINDS:
                raise ValueError(f"unknown texture kind {kind!r}")


def _log_uniform(rng, lo: float, hi: float) -> float:
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def _random_texture(rng, kinds) -> Texture:
    kind = kinds[rng.integers(len(kinds))]
    shade = lambda: tuple(float(v) for v in rng.uniform(0.05, 0.95, size=3))
    return Texture(kind=kind, rgb0=shade(), rgb1=shade(),
                   axis="x" if rng.uniform() < 0.5 else "y",
                   cell=int(rng.integers(3, 9)), seed=int(rng.integers(1 << 30)))


def random_scene(bank: BankSpec, index: int) -> SceneSpec:
    rng = np.random.default_rng([bank.seed, index])
    cam = CameraModel(bank.baseline_times_focal, bank.depth_cap)
    w, h = bank.width, bank.height

    def draw(lo, hi):
        d = _log_uniform(rng, lo, hi)
        return float(round(d)) if bank.integer_disparities else d

    margin = int(math.ceil(bank.d_background[1])) + 2
    disparities = [draw(*bank.d_background)]
    layers = [Layer(x0=-2, y0=0, x1=w + margin, y1=h,
                    disparity=disparities[0],
                    texture=_random_texture(rng, bank.texture_kinds))]
    n_fg = int(rng.integers(bank.n_foreground[0], bank.n_foreground[1] + 1))
    for _ in range(n_fg):
        for _ in range(64):
            d = draw(*bank.d_foreground)
            if all(abs(d - prev) > 0.25 for prev in disparities):
                break
        else:
            raise RuntimeError("could not draw a distinct foreground disparity")
        disparities.append(d)
        lw = int(rng.integers(w // 5, w // 2))
        lh = int(rng.integers(h // 4, int(h * 0.7)))
        x0 = int(rng.integers(int(0.15 * w), w - lw - 1))
        y0 = int(rng.integers(1, h - lh - 1))
        layers.append(Layer(x0=x0, y0=y0, x1=x0 + lw, y1=y0 + lh, disparity=d,
                            texture=_random_texture(rng, bank.texture_kinds)))
    return SceneSpec(width=w, height=h, layers=tuple(layers), camera=cam,
                     seed=int(rng.integers(1 << 30)))


def make_bank(bank: BankSpec) -> list[SceneSpec]:
    return [random_scene(bank, i) for i in range(bank.count)]
