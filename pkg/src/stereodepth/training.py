"""Two-step self-supervised training: view synthesis, then occlusion-aware
fine-tuning with mirrored supervision.

Every batch carries image pairs; the left image runs through the network
directly and the right image through the flip trick, so one canonical
left-view network serves both views. Step 1 trains with all-ones masks and
no mirror term. Step 2 builds both occlusion masks from the four per-view
probability volumes and supervises occluded regions against the detached
mirrored prediction of a fixed checkpoint.

All randomness (shuffling, augmentation) derives from per-purpose seed
streams, so a (seed, config) pair reproduces the run bitwise when numpy
runs single-threaded.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .augment import AugmentConfig, augment_sample
from .autodiff import Tape, Tensor
from .fileio import load_dataset, read_bank_spec
from .levels import (EXPONENTIAL, MODES, DisparityLevels, disparity_to_depth,
                     make_levels)
from .losses import (ALPHA_DS_STEP1, ALPHA_DS_STEP2, GAMMA_EDGE,
                     FeatureExtractor, LossWeights, mirror_loss,
                     reconstruction_loss, smoothness_loss, total_loss)
from .metrics import EvalReport, evaluate, postprocess_disparity
from .network import DispNet, NetworkConfig, load_checkpoint, save_checkpoint
from .occlusion import (mask_coverage, mirrored_disparity, occlusion_masks,
                        ones_mask)
from .optim import Adam
from .scenes import StereoSample, make_bank, render
from .volume import (LEFT, RIGHT, disparity_from_volume, synthesize_view,
                     volume_from_logits)
from .warp import WarpDirection

LOG_COLUMNS = ("epoch", "iteration", "lr", "rec_l", "rec_r", "mirror_l",
               "mirror_r", "smooth_l", "smooth_r", "total", "coverage_l",
               "coverage_r", "skipped")


@dataclass(frozen=True)
class TrainConfig:
    """Everything a run needs; serializes to JSON with strict field checking.

    `lr_halve_epochs` holds 0-based epoch indices: the listed epoch is the
    first one that uses the halved rate. `batch_size` counts images; each
    pair contributes one left-input and one right-input image, so it must
    be even.
    """

    data: str
    out_dir: str
    step: int = 1
    epochs: int = 5
    batch_size: int = 4
    lr: float = 1e-4
    lr_halve_epochs: tuple[int, ...] = (3, 4)
    seed: int = 0
    level_count: int = 17
    d_min: float = 2.0
    d_max: float = 300.0
    level_mode: str = EXPONENTIAL
    stages: int = 4
    base_channels: int = 8
    residual_blocks: int = 1
    skip_connections: bool = True
    crop_h: int = 96
    crop_w: int = 320
    resize_range: tuple[float, float] = (0.75, 1.5)
    hflip_prob: float = 0.5
    gamma_range: tuple[float, float] = (0.8, 1.2)
    brightness_range: tuple[float, float] = (0.8, 1.2)
    color_range: tuple[float, float] = (0.95, 1.05)
    alpha_ds: float = ALPHA_DS_STEP1
    alpha_p: float = 0.0
    gamma: float = GAMMA_EDGE
    init_checkpoint: str | None = None
    fixed_checkpoint: str | None = None
    force_masks_one: bool = False

    def __post_init__(self):
        if self.step not in (1, 2):
            raise ValueError(f"step must be 1 or 2, got {self.step}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ValueError(
                f"batch_size counts images and must be even and >= 2, got {self.batch_size}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if any(e < 0 for e in self.lr_halve_epochs) \
                or list(self.lr_halve_epochs) != sorted(self.lr_halve_epochs):
            raise ValueError(
                f"lr_halve_epochs must be sorted non-negative epoch indices, "
                f"got {self.lr_halve_epochs}")
        if self.level_mode not in MODES:
            raise ValueError(f"level_mode must be one of {MODES}, got {self.level_mode!r}")
        if self.step == 2 and not self.force_masks_one and not self.fixed_checkpoint:
            raise ValueError("step 2 needs a fixed_checkpoint for the mirrored disparity")
        if self.crop_h < 1 or self.crop_w < 1:
            raise ValueError(f"crop must be positive, got {self.crop_h}x{self.crop_w}")

    def network_config(self) -> NetworkConfig:
        return NetworkConfig(self.stages, self.base_channels, self.level_count,
                             self.residual_blocks, self.skip_connections)

    def levels(self) -> DisparityLevels:
        return make_levels(self.level_count, self.d_min, self.d_max, self.level_mode)

    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(self.crop_h, self.crop_w, self.resize_range,
                             self.hflip_prob, self.gamma_range,
                             self.brightness_range, self.color_range)

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.alpha_ds, self.alpha_p, self.gamma)

    def lr_at(self, epoch: int) -> float:
        halvings = sum(1 for e in self.lr_halve_epochs if epoch >= e)
        return self.lr * 0.5 ** halvings


_TUPLE_FIELDS = {
    "lr_halve_epochs": int,
    "resize_range": float,
    "gamma_range": float,
    "brightness_range": float,
    "color_range": float,
}


def config_to_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    for key in _TUPLE_FIELDS:
        d[key] = list(d[key])
    return d


def config_from_dict(d: dict) -> TrainConfig:
    allowed = set(TrainConfig.__dataclass_fields__)
    unknown = set(d) - allowed
    if unknown:
        raise ValueError(f"unknown train config field {sorted(unknown)[0]!r}")
    kwargs = dict(d)
    for key, cast in _TUPLE_FIELDS.items():
        if key in kwargs:
            kwargs[key] = tuple(cast(v) for v in kwargs[key])
    return TrainConfig(**kwargs)


def write_config(path, config: TrainConfig) -> None:
    Path(path).write_text(json.dumps(config_to_dict(config), indent=2,
                                     sort_keys=True) + "\n", encoding="ascii")


def read_config(path) -> TrainConfig:
    return config_from_dict(json.loads(Path(path).read_text(encoding="ascii")))


def step1_config(data, out_dir, **overrides) -> TrainConfig:
    """Desk-scale view-synthesis pretraining defaults."""
    base = TrainConfig(data=str(data), out_dir=str(out_dir), step=1, epochs=5,
                       lr=1e-4, lr_halve_epochs=(3, 4), alpha_ds=ALPHA_DS_STEP1)
    return replace(base, **overrides) if overrides else base


def step2_config(data, out_dir, init_checkpoint, fixed_checkpoint,
                 **overrides) -> TrainConfig:
    """Desk-scale occlusion-aware fine-tuning defaults."""
    base = TrainConfig(data=str(data), out_dir=str(out_dir), step=2, epochs=2,
                       lr=5e-5, lr_halve_epochs=(1,), alpha_ds=ALPHA_DS_STEP2,
                       init_checkpoint=str(init_checkpoint),
                       fixed_checkpoint=str(fixed_checkpoint))
    return replace(base, **overrides) if overrides else base


def paper_reference_config(data, out_dir, step: int = 1) -> TrainConfig:
    """Published full-scale schedule, kept for documentation; not run in tests."""
    shared = dict(data=str(data), out_dir=str(out_dir), level_count=49,
                  stages=6, base_channels=44, crop_h=192, crop_w=640,
                  batch_size=8)
    if step == 1:
        return TrainConfig(step=1, epochs=50, lr=1e-4, lr_halve_epochs=(30, 40),
                           alpha_ds=ALPHA_DS_STEP1, **shared)
    return TrainConfig(step=2, epochs=20, lr=5e-5, lr_halve_epochs=(10,),
                       alpha_ds=ALPHA_DS_STEP2, fixed_checkpoint="step1.ckpt",
                       init_checkpoint="step1.ckpt", **shared)


def load_training_data(path) -> list[StereoSample]:
    """Dataset directory (with a split file) or a bank-spec JSON."""
    p = Path(path)
    if p.is_dir():
        return load_dataset(p)
    if p.suffix == ".json":
        return [render(spec) for spec in make_bank(read_bank_spec(p))]
    raise ValueError(
        f"training data must be a dataset directory or a bank-spec JSON, got {path!r}")


@dataclass
class PairForward:
    """Both view passes of one batch: synthesized images, the four
    probability volumes, and the two regressed disparity maps."""

    synth_l: Tensor
    synth_r: Tensor
    vol_l_from_l: object
    vol_l_from_r: object
    vol_r_from_r: object
    vol_r_from_l: object
    disp_l: Tensor
    disp_r: Tensor


def pair_volumes(model, left: Tensor, right: Tensor,
                 levels: DisparityLevels) -> PairForward:
    """Run the left image directly and the right image via the flip trick.

    Each pass yields the same-view normalized volume plus the opposite-view
    one that synthesis produces by warping logits before the softmax; the
    four together feed the occlusion masks.
    """
    logits_l = model.forward(left)
    synth_r, vol_r_from_l = synthesize_view(left, logits_l, levels,
                                            WarpDirection.LTOR)
    vol_l_from_l = volume_from_logits(logits_l, levels, LEFT)

    logits_r = model.forward_as_right(right)
    synth_l, vol_l_from_r = synthesize_view(right, logits_r, levels,
                                            WarpDirection.RTOL)
    vol_r_from_r = volume_from_logits(logits_r, levels, RIGHT)

    return PairForward(synth_l=synth_l, synth_r=synth_r,
                       vol_l_from_l=vol_l_from_l, vol_l_from_r=vol_l_from_r,
                       vol_r_from_r=vol_r_from_r, vol_r_from_l=vol_r_from_l,
                       disp_l=disparity_from_volume(vol_l_from_l),
                       disp_r=disparity_from_volume(vol_r_from_r))


def pair_losses(model, left: Tensor, right: Tensor, levels: DisparityLevels,
                weights: LossWeights, step: int, fixed_model=None,
                extractor: FeatureExtractor | None = None,
                force_masks_one: bool = False) -> tuple[Tensor, dict]:
    """Total loss over one batch of stereo pairs, plus per-term scalars.

    Step 2 derives the two occlusion masks from the four volumes the two
    passes produce and adds mirrored-disparity supervision from
    `fixed_model` on the occluded pixels; step 1 (and the masks-forced-to-1
    control) uses all-ones masks and no mirror term.
    """
    use_mom = step == 2 and not force_masks_one
    if use_mom and fixed_model is None:
        raise ValueError("step-2 losses need the fixed model for mirrored disparity")

    fwd = pair_volumes(model, left, right, levels)

    mask_shape = (left.data.shape[0], 1) + left.data.shape[2:]
    if use_mom:
        o_left, o_right = occlusion_masks(fwd.vol_l_from_l, fwd.vol_l_from_r,
                                          fwd.vol_r_from_r, fwd.vol_r_from_l)
        d_lm = mirrored_disparity(fixed_model, left, levels, LEFT)
        d_rm = mirrored_disparity(fixed_model, right, levels, RIGHT)
        m_l = mirror_loss(fwd.disp_l, d_lm, o_left)
        m_r = mirror_loss(fwd.disp_r, d_rm, o_right)
    else:
        o_left = ones_mask(mask_shape, LEFT, dtype=left.data.dtype)
        o_right = ones_mask(mask_shape, RIGHT, dtype=left.data.dtype)
        zero = Tensor(np.zeros((), dtype=left.data.dtype))
        m_l, m_r = zero, zero

    rec_r = reconstruction_loss(fwd.synth_r, right, o_right, extractor,
                                weights.alpha_p)
    rec_l = reconstruction_loss(fwd.synth_l, left, o_left, extractor,
                                weights.alpha_p)
    ds_l = smoothness_loss(fwd.disp_l, left, weights.gamma)
    ds_r = smoothness_loss(fwd.disp_r, right, weights.gamma)
    total = total_loss(rec_l, rec_r, m_l, m_r, ds_l, ds_r, weights.alpha_ds)

    terms = {
        "rec_l": rec_l.item(), "rec_r": rec_r.item(),
        "mirror_l": m_l.item(), "mirror_r": m_r.item(),
        "smooth_l": ds_l.item(), "smooth_r": ds_r.item(),
        "total": total.item(),
        "coverage_l": mask_coverage(o_left),
        "coverage_r": mask_coverage(o_right),
    }
    return total, terms


@dataclass
class TrainResult:
    config: TrainConfig
    out_dir: Path
    final_checkpoint: Path
    best_checkpoint: Path
    log_path: Path
    rows: list[dict] = field(repr=False, default_factory=list)
    epoch_total_means: list[float] = field(default_factory=list)
    epoch_rec_means: list[float] = field(default_factory=list)
    epoch_coverage_means: list[float] = field(default_factory=list)
    skipped_steps: int = 0
    model: DispNet | None = field(repr=False, default=None)
    levels: DisparityLevels | None = field(repr=False, default=None)


def _batch_tensors(samples: list[StereoSample]) -> tuple[Tensor, Tensor]:
    left = np.stack([s.left for s in samples]).astype(np.float32)
    right = np.stack([s.right for s in samples]).astype(np.float32)
    return Tensor(left), Tensor(right)


def _init_model(config: TrainConfig, levels: DisparityLevels) -> DispNet:
    if config.init_checkpoint:
        model, ckpt_levels, _ = load_checkpoint(config.init_checkpoint)
        if not np.array_equal(ckpt_levels.values, levels.values):
            raise ValueError(
                f"checkpoint {config.init_checkpoint!r} was trained on a different "
                f"disparity level grid than the config requests")
        return model
    return DispNet(config.network_config(), seed=config.seed)


def train(config: TrainConfig, data: list[StereoSample] | None = None,
          log_fn=None) -> TrainResult:
    """Run one training step to completion and save artifacts in out_dir.

    Pass `data` to reuse already-rendered samples; otherwise it loads from
    config.data. Raises RuntimeError on a non-finite loss, naming the
    iteration.
    """
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = load_training_data(config.data) if data is None else data
    pairs_per_batch = config.batch_size // 2
    if len(samples) < pairs_per_batch:
        raise ValueError(f"{len(samples)} training samples cannot fill a batch of "
                         f"{pairs_per_batch} pairs")

    levels = config.levels()
    model = _init_model(config, levels)
    model.attach_levels(levels)
    fixed_model = None
    if config.step == 2 and config.fixed_checkpoint:
        fixed_model, fixed_levels, _ = load_checkpoint(config.fixed_checkpoint)
        if not np.array_equal(fixed_levels.values, levels.values):
            raise ValueError(
                f"fixed checkpoint {config.fixed_checkpoint!r} uses a different "
                f"disparity level grid than the config requests")
        fixed_model.attach_levels(fixed_levels)
    extractor = FeatureExtractor(seed=config.seed) if config.alpha_p > 0 else None
    weights = config.loss_weights()
    opt = Adam(model.parameters(), lr=config.lr)
    aug_cfg = config.augment_config()

    rows: list[dict] = []
    epoch_totals: list[float] = []
    epoch_recs: list[float] = []
    epoch_covs: list[float] = []
    best = math.inf
    best_path = out_dir / "model_best.ckpt"
    final_path = out_dir / "model_final.ckpt"
    write_config(out_dir / "config.json", config)

    sample_counter = 0
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        opt.lr = lr
        order = np.random.default_rng([config.seed, 11, epoch]).permutation(len(samples))
        n_batches = len(order) // pairs_per_batch
        e_totals, e_recs, e_covs = [], [], []
        for it in range(n_batches):
            picked = order[it * pairs_per_batch:(it + 1) * pairs_per_batch]
            batch = []
            for idx in picked:
                rng = np.random.default_rng([config.seed, 7, epoch, sample_counter])
                sample_counter += 1
                batch.append(augment_sample(samples[int(idx)], aug_cfg, rng))
            left, right = _batch_tensors(batch)

            with Tape() as tape:
                total, terms = pair_losses(
                    model, left, right, levels, weights, config.step,
                    fixed_model=fixed_model, extractor=extractor,
                    force_masks_one=config.force_masks_one)
                if not math.isfinite(terms["total"]):
                    raise RuntimeError(
                        f"non-finite loss {terms['total']} at epoch {epoch} "
                        f"iteration {it}")
                opt.zero_grad()
                tape.backward(total)
            opt.step()

            row = {"epoch": epoch, "iteration": it, "lr": lr, **terms,
                   "skipped": opt.skipped}
            rows.append(row)
            e_totals.append(terms["total"])
            e_recs.append(0.5 * (terms["rec_l"] + terms["rec_r"]))
            e_covs.append(0.5 * (terms["coverage_l"] + terms["coverage_r"]))
            if log_fn:
                log_fn(row)

        epoch_totals.append(float(np.mean(e_totals)))
        epoch_recs.append(float(np.mean(e_recs)))
        epoch_covs.append(float(np.mean(e_covs)))
        if epoch_totals[-1] < best:
            best = epoch_totals[-1]
            save_checkpoint(best_path, model, levels, step=config.step, epoch=epoch)

    save_checkpoint(final_path, model, levels, step=config.step,
                    epoch=config.epochs - 1)
    log_path = out_dir / "train_log.csv"
    with open(log_path, "w", newline="", encoding="ascii") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)

    return TrainResult(config=config, out_dir=out_dir,
                       final_checkpoint=final_path, best_checkpoint=best_path,
                       log_path=log_path, rows=rows,
                       epoch_total_means=epoch_totals,
                       epoch_rec_means=epoch_recs,
                       epoch_coverage_means=epoch_covs,
                       skipped_steps=opt.skipped, model=model, levels=levels)


def gt_depth_map(sample: StereoSample) -> np.ndarray:
    """Ground-truth depth with 0 marking invalid (zero-disparity) pixels."""
    if sample.gt_disparity_L is None or sample.camera is None:
        raise ValueError("sample carries no ground-truth disparity and camera")
    gt = sample.gt_disparity_L
    depth = np.zeros_like(gt)
    pos = gt > 0
    depth[pos] = sample.camera.baseline_times_focal / gt[pos]
    return depth


def evaluate_model(model, levels: DisparityLevels, samples: list[StereoSample],
                   pp_mode: str = "none", median_scaling: bool = False) -> EvalReport:
    """Eigen-style depth metrics of a model over ground-truthed samples."""
    gt_maps, pred_maps = [], []
    cap = None
    for sample in samples:
        if sample.gt_disparity_L is None or sample.camera is None:
            continue
        cap = sample.camera.depth_cap
        disp = postprocess_disparity(model, levels, sample.left, pp_mode)
        pred_maps.append(disparity_to_depth(disp, sample.camera,
                                            levels.default_floor))
        gt_maps.append(gt_depth_map(sample))
    if not gt_maps:
        raise ValueError("no evaluation samples carry ground truth")
    return evaluate(gt_maps, pred_maps, cap=cap, median_scaling=median_scaling)
