"""On-disk formats: PNG images, PFM float maps, split files, scene datasets.

PFM files are written as little-endian 32-bit floats with bottom-up rows
(scale line -1.0) and round-trip bitwise. PNGs are 8-bit RGB, so a float
image round-trips to within 1/255 per channel. A dataset directory holds one
subdirectory per scene plus a split.txt listing relative left/right pairs.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np
from PIL import Image

from .levels import CameraModel
from .scenes import BankSpec, Layer, SceneSpec, StereoSample, Texture, render

DATASET_SPLIT = "split.txt"


# PNG

def write_png(path, img: np.ndarray) -> None:
    """[3, H, W] float in [0, 1] or [H, W] mask to an 8-bit PNG."""
    path = Path(path)
    arr = np.asarray(img)
    if arr.ndim == 3:
        if arr.shape[0] != 3:
            raise ValueError(f"expected [3,H,W] image, got {arr.shape}")
        data = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
        Image.fromarray(data, mode="RGB").save(path)
    elif arr.ndim == 2:
        if arr.dtype == np.uint8 and arr.max(initial=0) <= 1:
            data = arr * 255
        else:
            data = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(data.astype(np.uint8), mode="L").save(path)
    else:
        raise ValueError(f"cannot write array of shape {arr.shape} as PNG")


def read_png(path) -> np.ndarray:
    """8-bit PNG to [3, H, W] float32 in [0, 1] (grayscale to [H, W])."""
    with Image.open(Path(path)) as im:
        if im.mode == "L":
            return np.asarray(im, dtype=np.float32) / 255.0
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1)


# PFM

def write_pfm(path, data: np.ndarray) -> None:
    """[H, W] or [H, W, 3] float32 map, little-endian, bottom-up rows."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 2:
        header = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        header = b"PF"
    else:
        raise ValueError(f"PFM needs [H,W] or [H,W,3], got {arr.shape}")
    h, w = arr.shape[0], arr.shape[1]
    with Path(path).open("wb") as fh:
        fh.write(header + b"\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(arr[::-1].astype("<f4").tobytes())


def _pfm_token(fh, path) -> bytes:
    tok = b""
    while True:
        ch = fh.read(1)
        if not ch:
            raise ValueError(f"{path}: truncated PFM header at byte {fh.tell()}")
        if ch in b" \t\r\n":
            if tok:
                return tok
            continue
        tok += ch


def read_pfm(path) -> np.ndarray:
    path = Path(path)
    with path.open("rb") as fh:
        magic = _pfm_token(fh, path)
        if magic not in (b"Pf", b"PF"):
            raise ValueError(
                f"{path}: bad PFM magic {magic!r} at byte {fh.tell()}, expected 'Pf' or 'PF'")
        channels = 1 if magic == b"Pf" else 3
        try:
            w = int(_pfm_token(fh, path))
            h = int(_pfm_token(fh, path))
            scale = float(_pfm_token(fh, path))
        except ValueError as exc:
            if "truncated" in str(exc) or "byte" in str(exc):
                raise
            raise ValueError(f"{path}: malformed PFM dims/scale at byte {fh.tell()}") from exc
        if w <= 0 or h <= 0:
            raise ValueError(f"{path}: invalid PFM dims {w}x{h} at byte {fh.tell()}")
        if scale == 0.0:
            raise ValueError(f"{path}: PFM scale must be nonzero at byte {fh.tell()}")
        dtype = "<f4" if scale < 0 else ">f4"
        count = w * h * channels
        raw = fh.read(4 * count)
        if len(raw) != 4 * count:
            raise ValueError(
                f"{path}: PFM payload truncated: expected {4 * count} bytes, got {len(raw)}")
    arr = np.frombuffer(raw, dtype=dtype).astype(np.float32)
    shape = (h, w) if channels == 1 else (h, w, 3)
    return arr.reshape(shape)[::-1].copy()


# split files

def write_split(path, pairs: list[tuple[str, str]]) -> None:
    with Path(path).open("w") as fh:
        for left, right in pairs:
            fh.write(f"{left} {right}\n")


def read_split(root, split_path) -> list[tuple[Path, Path]]:
    """Resolve 'left right' relative-path lines against root, checking existence."""
    root = Path(root)
    split_path = Path(split_path)
    pairs = []
    with split_path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(
                    f"{split_path}:{lineno}: expected 'left right', got {line!r}")
            lp, rp = root / parts[0], root / parts[1]
            for p in (lp, rp):
                if not p.is_file():
                    raise FileNotFoundError(f"{split_path}:{lineno}: missing image {p}")
            pairs.append((lp, rp))
    return pairs


# scene/bank JSON

def scene_spec_to_dict(spec: SceneSpec) -> dict:
    return {
        "width": spec.width, "height": spec.height, "seed": spec.seed,
        "camera": {"baseline_times_focal": spec.camera.baseline_times_focal,
                   "depth_cap": spec.camera.depth_cap},
        "layers": [{
            "x0": lay.x0, "y0": lay.y0, "x1": lay.x1, "y1": lay.y1,
            "disparity": lay.disparity,
            "texture": asdict(lay.texture),
        } for lay in spec.layers],
    }


def _take_fields(d: dict, allowed: set[str], what: str) -> dict:
    unknown = set(d) - allowed
    if unknown:
        raise ValueError(f"{what}: unknown field {sorted(unknown)[0]!r}")
    return d


def scene_spec_from_dict(d: dict) -> SceneSpec:
    _take_fields(d, {"width", "height", "seed", "camera", "layers"}, "scene spec")
    cam = _take_fields(dict(d["camera"]), {"baseline_times_focal", "depth_cap"}, "camera")
    layers = []
    for i, ld in enumerate(d["layers"]):
        ld = _take_fields(dict(ld), {"x0", "y0", "x1", "y1", "disparity", "texture"},
                          f"layer {i}")
        td = dict(ld.pop("texture"))
        _take_fields(td, {"kind", "rgb0", "rgb1", "axis", "cell", "seed"}, f"layer {i} texture")
        td["rgb0"] = tuple(td.get("rgb0", (0.1, 0.1, 0.1)))
        td["rgb1"] = tuple(td.get("rgb1", (0.9, 0.9, 0.9)))
        layers.append(Layer(texture=Texture(**td), **ld))
    return SceneSpec(width=d["width"], height=d["height"], seed=d.get("seed", 0),
                     camera=CameraModel(**cam), layers=tuple(layers))


def write_scene_spec(path, spec: SceneSpec) -> None:
    Path(path).write_text(json.dumps(scene_spec_to_dict(spec), indent=2, sort_keys=True))


def read_scene_spec(path) -> SceneSpec:
    return scene_spec_from_dict(json.loads(Path(path).read_text()))


def write_bank_spec(path, bank: BankSpec) -> None:
    Path(path).write_text(json.dumps(asdict(bank), indent=2, sort_keys=True))


def read_bank_spec(path) -> BankSpec:
    d = json.loads(Path(path).read_text())
    allowed = {"seed", "count", "width", "height", "baseline_times_focal", "depth_cap",
               "d_background", "d_foreground", "n_foreground", "integer_disparities",
               "texture_kinds"}
    _take_fields(d, allowed, "bank spec")
    for key in ("d_background", "d_foreground", "n_foreground", "texture_kinds"):
        if key in d:
            d[key] = tuple(d[key])
    return BankSpec(**d)


# dataset directories

def save_dataset(out_dir, specs: list[SceneSpec]) -> Path:
    """Render scenes into out_dir/scene_NNNN/ plus a split.txt; returns the root."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pairs = []
    for i, spec in enumerate(specs):
        name = f"scene_{i:04d}"
        sub = out_dir / name
        sub.mkdir(exist_ok=True)
        sample = render(spec)
        write_png(sub / "left.png", sample.left)
        write_png(sub / "right.png", sample.right)
        write_pfm(sub / "disp_left.pfm", sample.gt_disparity_L)
        write_pfm(sub / "disp_right.pfm", sample.gt_disparity_R)
        write_png(sub / "occ_left.png", sample.gt_occlusion_L)
        write_png(sub / "occ_right.png", sample.gt_occlusion_R)
        write_scene_spec(sub / "spec.json", spec)
        pairs.append((f"{name}/left.png", f"{name}/right.png"))
    write_split(out_dir / DATASET_SPLIT, pairs)
    return out_dir


def load_dataset(root) -> list[StereoSample]:
    """Load a dataset directory; ground truth is attached where present."""
    root = Path(root)
    split = root / DATASET_SPLIT
    if not split.is_file():
        raise FileNotFoundError(f"no {DATASET_SPLIT} under {root}")
    samples = []
    for lp, rp in read_split(root, split):
        sub = lp.parent
        sample = StereoSample(left=read_png(lp), right=read_png(rp))
        disp_l, disp_r = sub / "disp_left.pfm", sub / "disp_right.pfm"
        if disp_l.is_file():
            sample.gt_disparity_L = read_pfm(disp_l)
        if disp_r.is_file():
            sample.gt_disparity_R = read_pfm(disp_r)
        occ_l, occ_r = sub / "occ_left.png", sub / "occ_right.png"
        if occ_l.is_file():
            sample.gt_occlusion_L = (read_png(occ_l) > 0.5).astype(np.uint8)
        if occ_r.is_file():
            sample.gt_occlusion_R = (read_png(occ_r) > 0.5).astype(np.uint8)
        spec_path = sub / "spec.json"
        if spec_path.is_file():
            sample.camera = read_scene_spec(spec_path).camera
        samples.append(sample)
    return samples
