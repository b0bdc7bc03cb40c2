"""Disparity auto-encoder producing per-level logits, plus checkpointing.

The encoder doubles channels per stride-2 stage (capped at 8x base) with one
residual block per downsampling; the decoder mirrors it with nearest-upsample
plus conv and skip concatenations. ELU activations throughout; the head conv
emits one logit channel per disparity level at input resolution, normalized
per pixel across levels so the downstream softmax cannot saturate globally.

Checkpoints are a single file: one JSON manifest line (config, parameter
names/shapes/offsets, step/epoch/seed) followed by the raw little-endian
float32 parameter blob. Save then load is bitwise exact.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import ops
from .autodiff import Tensor
from .levels import DisparityLevels, make_levels
from .volume import LEFT, RIGHT, DispVolume, disparity_from_volume, volume_from_logits

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    stages: int = 6
    base_channels: int = 32
    level_count: int = 49
    residual_blocks: int = 1
    skip_connections: bool = True

    def __post_init__(self):
        if self.stages < 2:
            raise ValueError(f"need at least 2 stages, got {self.stages}")
        if self.base_channels < 1 or self.level_count < 2 or self.residual_blocks < 0:
            raise ValueError("invalid network config")

    def channels(self, stage: int) -> int:
        return min(self.base_channels * (1 << stage), 8 * self.base_channels)

    @property
    def spatial_multiple(self) -> int:
        return 1 << (self.stages - 1)


def toy_config(level_count: int = 9) -> NetworkConfig:
    """Small config for desk-scale runs and end-to-end tests."""
    return NetworkConfig(stages=4, base_channels=8, level_count=level_count)


def paperlike_config() -> NetworkConfig:
    """Full-size config kept for shape and parameter-count reporting."""
    return NetworkConfig(stages=6, base_channels=44, level_count=49)


def _lecun_init(rng, cout: int, cin: int, k: int) -> np.ndarray:
    # ELU trunk with no normalization layers: unit forward gain needs
    # 1/fan_in variance; the ReLU-oriented 2/fan_in doubles the variance
    # per conv and compounds to feature blow-up over a dozen layers
    std = np.sqrt(1.0 / (cin * k * k))
    return rng.normal(0.0, std, size=(cout, cin, k, k)).astype(np.float32)


class DispNet:
    """Monocular disparity-logit network in the left-view convention."""

    def __init__(self, config: NetworkConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng([seed, 0xD15B])

        def add_conv(name, cin, cout, k=3):
            self.params[f"{name}.w"] = Tensor(_lecun_init(rng, cout, cin, k),
                                              requires_grad=True)
            self.params[f"{name}.b"] = Tensor(np.zeros(cout, np.float32),
                                              requires_grad=True)

        c = config.channels
        add_conv("enc0", 3, c(0))
        for s in range(1, config.stages):
            add_conv(f"down{s}", c(s - 1), c(s))
            for r in range(config.residual_blocks):
                add_conv(f"res{s}.{r}.a", c(s), c(s))
                add_conv(f"res{s}.{r}.b", c(s), c(s))
        for s in range(config.stages - 1, 0, -1):
            cin = c(s) + (c(s - 1) if config.skip_connections else 0)
            add_conv(f"up{s}", cin, c(s - 1))
        add_conv("head", c(0), config.level_count)
        # the level softmax has a runaway failure mode without this: any
        # majority of pixels whose photometric optimum is one level pushes
        # the trunk toward aligned amplifying directions, logits grow until
        # the softmax saturates, and every gradient dies; normalizing the
        # logits per pixel removes the reward for that amplification and
        # caps the sharpness in the per-channel gain below
        self.params["head_norm.g"] = Tensor(np.ones(config.level_count, np.float32),
                                            requires_grad=True)
        self.params["head_norm.b"] = Tensor(np.zeros(config.level_count, np.float32),
                                            requires_grad=True)

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def _conv(self, name, x, stride=1):
        return ops.conv2d(x, self.params[f"{name}.w"], self.params[f"{name}.b"],
                          stride=stride, padding=1)

    def forward(self, x: Tensor) -> Tensor:
        """Image [B, 3, H, W] to disparity logits [B, L, H, W]."""
        if x.data.ndim != 4 or x.data.shape[1] != 3:
            raise ValueError(f"expected [B,3,H,W] input, got {x.data.shape}")
        m = self.config.spatial_multiple
        if x.data.shape[2] % m or x.data.shape[3] % m:
            raise ValueError(
                f"input spatial dims {x.data.shape[2]}x{x.data.shape[3]} "
                f"must be multiples of {m} for {self.config.stages} stages")

        feats = [self._conv("enc0", x).elu()]
        for s in range(1, self.config.stages):
            h = self._conv(f"down{s}", feats[-1], stride=2).elu()
            for r in range(self.config.residual_blocks):
                inner = self._conv(f"res{s}.{r}.b",
                                   self._conv(f"res{s}.{r}.a", h).elu())
                h = (h + inner).elu()
            feats.append(h)

        h = feats[-1]
        for s in range(self.config.stages - 1, 0, -1):
            h = ops.upsample_nearest2x(h)
            if self.config.skip_connections:
                h = ops.concat_channels([h, feats[s - 1]])
            h = self._conv(f"up{s}", h).elu()
        return ops.layernorm_channels(self._conv("head", h),
                                      self.params["head_norm.g"],
                                      self.params["head_norm.b"])

    def forward_as_right(self, x: Tensor) -> Tensor:
        """Right-aligned logits via the mirror trick: flip, run, flip back."""
        return ops.flip_w(self.forward(ops.flip_w(x)))

    def predict_volume(self, x: Tensor, levels: DisparityLevels,
                       alignment: str = LEFT) -> DispVolume:
        logits = self.forward(x) if alignment == LEFT else self.forward_as_right(x)
        return volume_from_logits(logits, levels, alignment)

    def predict_disparity(self, x: Tensor, levels: DisparityLevels | None = None,
                          alignment: str = LEFT) -> Tensor:
        if levels is None:
            levels = self.default_levels
        return disparity_from_volume(self.predict_volume(x, levels, alignment))

    @property
    def default_levels(self) -> DisparityLevels:
        if not hasattr(self, "_levels"):
            raise ValueError("model has no levels attached; pass levels explicitly")
        return self._levels

    def attach_levels(self, levels: DisparityLevels) -> "DispNet":
        if levels.count != self.config.level_count:
            raise ValueError(
                f"levels count {levels.count} != network level_count {self.config.level_count}")
        self._levels = levels
        return self


def save_checkpoint(path, model: DispNet, levels: DisparityLevels,
                    step: int = 0, epoch: int = 0) -> None:
    path = Path(path)
    entries = []
    offset = 0
    blobs = []
    for name, p in model.params.items():
        arr = np.ascontiguousarray(p.data.astype("<f4", copy=False))
        entries.append({"name": name, "shape": list(arr.shape),
                        "dtype": "float32", "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "levels": {"count": levels.count, "d_min": levels.d_min,
                   "d_max": levels.d_max, "mode": levels.mode},
        "seed": model.seed,
        "step": int(step),
        "epoch": int(epoch),
        "blob_bytes": offset,
        "params": entries,
    }
    with path.open("wb") as fh:
        fh.write(json.dumps(manifest, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for b in blobs:
            fh.write(b)


def load_checkpoint(path) -> tuple[DispNet, DisparityLevels, dict]:
    path = Path(path)
    with path.open("rb") as fh:
        header = fh.readline()
        blob = fh.read()
    try:
        manifest = json.loads(header.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: malformed checkpoint manifest: {exc}") from exc
    version = manifest.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint format_version {version}")

    known = {f.name for f in fields(NetworkConfig)}
    cfg_dict = manifest["config"]
    unknown = set(cfg_dict) - known
    if unknown:
        raise ValueError(f"{path}: unknown config field {sorted(unknown)[0]!r}")
    config = NetworkConfig(**cfg_dict)

    expected = manifest["blob_bytes"]
    if len(blob) != expected:
        raise ValueError(
            f"{path}: parameter blob truncated or padded: expected {expected} bytes, "
            f"found {len(blob)}")

    model = DispNet(config, seed=manifest.get("seed", 0))
    for entry in manifest["params"]:
        name = entry["name"]
        if name not in model.params:
            raise ValueError(f"{path}: manifest parameter {name!r} not in model")
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) * 4
        start = entry["offset"]
        arr = np.frombuffer(blob, dtype="<f4", count=n // 4, offset=start)
        model.params[name].data = arr.reshape(shape).astype(np.float32).copy()

    lv = manifest["levels"]
    levels = make_levels(lv["count"], lv["d_min"], lv["d_max"], lv["mode"])
    model.attach_levels(levels)
    meta = {"step": manifest["step"], "epoch": manifest["epoch"],
            "seed": manifest.get("seed", 0)}
    return model, levels, meta
