"""Command-line entry point.

Subcommands cover the whole workflow: render synthetic stereo data, run
both training steps, evaluate checkpoints, inspect view synthesis and
occlusion masks, verify gradients, and dump the level-allocation curves.
Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .autodiff import Tensor, no_grad
from .fileio import (read_bank_spec, save_dataset, write_bank_spec, write_png)
from .gradcheck import run_checks
from .levels import CameraModel, EXPONENTIAL, LINEAR, make_levels, write_level_curves
from .metrics import PP_MODES, psnr
from .network import load_checkpoint
from .occlusion import mask_iou, occlusion_masks
from .scenes import BankSpec, make_bank
from .training import (TrainConfig, evaluate_model, load_training_data,
                       pair_volumes, read_config, step1_config, step2_config,
                       train)
from .volume import synthesize_view
from .warp import WarpDirection

_MODE_ALIASES = {"exp": EXPONENTIAL, "exponential": EXPONENTIAL, "linear": LINEAR}


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this surface reserves 2 for runtime."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add(sub, name, help_text):
    return sub.add_parser(name, help=help_text, description=help_text,
                          formatter_class=argparse.ArgumentDefaultsHelpFormatter)


def _load_pair(args):
    """(model, levels, samples) shared by eval/synth-view/occlusion."""
    model, levels, _ = load_checkpoint(args.checkpoint)
    model.attach_levels(levels)
    samples = load_training_data(args.data)
    return model, levels, samples


def _pick_sample(samples, index: int):
    if not 0 <= index < len(samples):
        raise ValueError(f"sample index {index} out of range, dataset has {len(samples)}")
    return samples[index]


def cmd_make_data(args) -> int:
    if args.bank_spec:
        bank = read_bank_spec(args.bank_spec)
    else:
        bank = BankSpec(seed=args.seed, count=args.count, width=args.width,
                        height=args.height,
                        baseline_times_focal=args.bf, depth_cap=args.cap,
                        d_background=tuple(args.d_background),
                        d_foreground=tuple(args.d_foreground),
                        integer_disparities=args.integer_disparities)
    out = Path(args.out)
    save_dataset(out, make_bank(bank))
    write_bank_spec(out / "bank.json", bank)
    print(f"wrote {bank.count} scenes of {bank.height}x{bank.width} to {out}")
    return 0


def _train_config_from_args(args, step: int) -> TrainConfig:
    if args.config:
        config = read_config(args.config)
        if config.step != step:
            raise ValueError(f"config file has step={config.step}, "
                             f"but this command runs step {step}")
        return config
    overrides = dict(
        epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
        lr_halve_epochs=tuple(int(e) for e in args.halve.split(",") if e),
        seed=args.seed, level_count=args.levels, d_min=args.d_min,
        d_max=args.d_max, level_mode=_MODE_ALIASES[args.level_mode],
        stages=args.stages, base_channels=args.base_channels,
        crop_h=args.crop_h, crop_w=args.crop_w, alpha_p=args.alpha_p)
    if args.alpha_ds is not None:
        overrides["alpha_ds"] = args.alpha_ds
    if step == 1:
        if args.init:
            overrides["init_checkpoint"] = args.init
        return step1_config(args.data, args.out, **overrides)
    overrides["force_masks_one"] = args.force_masks_one
    return step2_config(args.data, args.out, args.init, args.fixed, **overrides)


def _add_train_flags(p, step: int):
    p.add_argument("--data", required=True, help="dataset dir or bank-spec JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", default=None,
                   help="JSON train config; overrides every other flag")
    p.add_argument("--epochs", type=int, default=5 if step == 1 else 2)
    p.add_argument("--batch-size", type=int, default=4,
                   help="images per iteration (two per stereo pair)")
    p.add_argument("--lr", type=float, default=1e-4 if step == 1 else 5e-5)
    p.add_argument("--halve", default="3,4" if step == 1 else "1",
                   help="comma-separated 0-based epochs where lr halves")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--levels", type=int, default=17, help="disparity level count")
    p.add_argument("--d-min", type=float, default=2.0)
    p.add_argument("--d-max", type=float, default=300.0)
    p.add_argument("--level-mode", choices=sorted(_MODE_ALIASES), default="exp")
    p.add_argument("--stages", type=int, default=4)
    p.add_argument("--base-channels", type=int, default=8)
    p.add_argument("--crop-h", type=int, default=96)
    p.add_argument("--crop-w", type=int, default=320)
    p.add_argument("--alpha-ds", type=float, default=None,
                   help="smoothness weight; default 0.0008 step 1, 0.0016 step 2")
    p.add_argument("--alpha-p", type=float, default=0.0, help="perceptual weight")
    if step == 1:
        p.add_argument("--init", default=None, help="warm-start checkpoint")
    else:
        p.add_argument("--init", required=True, help="checkpoint to fine-tune")
        p.add_argument("--fixed", required=True,
                       help="frozen checkpoint providing mirrored disparity")
        p.add_argument("--force-masks-one", action="store_true",
                       help="ablation control: disable MOM masks")


def _run_training(args, step: int) -> int:
    config = _train_config_from_args(args, step)
    result = train(config)
    for e, (tot, rec, cov) in enumerate(zip(result.epoch_total_means,
                                            result.epoch_rec_means,
                                            result.epoch_coverage_means)):
        print(f"epoch {e}: total={tot:.5f} rec={rec:.5f} coverage={cov:.3f} "
              f"lr={config.lr_at(e):.2e}")
    if result.skipped_steps:
        print(f"skipped {result.skipped_steps} optimizer steps (non-finite gradients)")
    print(f"final checkpoint: {result.final_checkpoint}")
    print(f"best checkpoint:  {result.best_checkpoint}")
    print(f"training log:     {result.log_path}")
    return 0


def cmd_train(args) -> int:
    return _run_training(args, step=1)


def cmd_finetune_mom(args) -> int:
    return _run_training(args, step=2)


def cmd_eval(args) -> int:
    model, levels, samples = _load_pair(args)
    report = evaluate_model(model, levels, samples, pp_mode=args.pp,
                            median_scaling=args.median_scaling)
    print(report.format_table())
    if args.csv:
        report.write_csv(args.csv)
        print(f"wrote {args.csv}")
    return 0


def cmd_synth_view(args) -> int:
    model, levels, samples = _load_pair(args)
    sample = _pick_sample(samples, args.index)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with no_grad():
        logits = model.forward(Tensor(sample.left[None]))
        synth, _ = synthesize_view(Tensor(sample.left[None]), logits, levels,
                                   WarpDirection.LTOR)
    synth_img = np.clip(synth.data[0], 0.0, 1.0)
    write_png(out / "synth_right.png", synth_img)
    write_png(out / "right_reference.png", sample.right)
    mask = sample.gt_occlusion_R
    quality = psnr(synth_img, sample.right, mask=mask)
    where = "visible pixels" if mask is not None else "all pixels"
    print(f"synthesized right view PSNR: {quality:.2f} dB ({where})")
    print(f"wrote {out / 'synth_right.png'} and {out / 'right_reference.png'}")
    return 0


def cmd_occlusion(args) -> int:
    model, levels, samples = _load_pair(args)
    sample = _pick_sample(samples, args.index)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with no_grad():
        fwd = pair_volumes(model, Tensor(sample.left[None]),
                           Tensor(sample.right[None]), levels)
        o_left, o_right = occlusion_masks(fwd.vol_l_from_l, fwd.vol_l_from_r,
                                          fwd.vol_r_from_r, fwd.vol_r_from_l)
    write_png(out / "occlusion_left.png", o_left.values.data[0, 0])
    write_png(out / "occlusion_right.png", o_right.values.data[0, 0])
    print(f"mask coverage: left={o_left.values.data.mean():.3f} "
          f"right={o_right.values.data.mean():.3f}")
    if sample.gt_occlusion_L is not None:
        print(f"IoU vs oracle (occluded regions, threshold 0.5): "
              f"left={mask_iou(o_left, sample.gt_occlusion_L):.3f} "
              f"right={mask_iou(o_right, sample.gt_occlusion_R):.3f}")
    print(f"wrote masks to {out}")
    return 0


def cmd_gradcheck(args) -> int:
    names = [n for n in args.cases.split(",") if n] if args.cases else None
    results = run_checks(names, seeds=args.seeds)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    if failed:
        raise RuntimeError(f"{len(failed)} gradcheck case(s) above tolerance: "
                           + ", ".join(r.name for r in failed))
    print(f"all {len(results)} cases within {results[0].tol:.0e}")
    return 0


def cmd_disc_curves(args) -> int:
    counts = [int(c) for c in args.levels.split(",") if c]
    modes = [_MODE_ALIASES[m.strip()] for m in args.mode.split(",") if m]
    sets = [make_levels(n, args.d_min, args.d_max, mode)
            for mode in modes for n in counts]
    camera = CameraModel(args.bf, args.cap)
    write_level_curves(args.out, sets, camera)
    rows = sum(s.count for s in sets)
    print(f"wrote {rows} rows ({len(sets)} curves) to {args.out}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="stereodepth",
                     description=__doc__.split("\n\n")[0],
                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = _add(sub, "make-data", "Render a synthetic rectified-stereo dataset.")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--bank-spec", default=None,
                   help="bank-spec JSON; other scene flags are ignored if set")
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=96)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--bf", type=float, default=80.0,
                   help="baseline times focal length (pixel meters)")
    p.add_argument("--cap", type=float, default=80.0, help="depth cap in meters")
    p.add_argument("--d-background", type=float, nargs=2, default=[1.2, 3.0],
                   metavar=("LO", "HI"))
    p.add_argument("--d-foreground", type=float, nargs=2, default=[6.0, 15.0],
                   metavar=("LO", "HI"))
    p.add_argument("--integer-disparities", action="store_true",
                   help="draw integer disparities (exact warp oracle scenes)")
    p.set_defaults(fn=cmd_make_data)

    p = _add(sub, "train", "Step-1 view-synthesis training.")
    _add_train_flags(p, step=1)
    p.set_defaults(fn=cmd_train)

    p = _add(sub, "finetune-mom", "Step-2 occlusion-aware fine-tuning.")
    _add_train_flags(p, step=2)
    p.set_defaults(fn=cmd_finetune_mom)

    p = _add(sub, "eval", "Depth metrics of a checkpoint on a dataset.")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset dir or bank-spec JSON")
    p.add_argument("--pp", choices=PP_MODES, default="none",
                   help="postprocess mode")
    p.add_argument("--median-scaling", action="store_true")
    p.add_argument("--csv", default=None, help="also write the report as CSV")
    p.set_defaults(fn=cmd_eval)

    p = _add(sub, "synth-view", "Synthesize the right view of one sample.")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--index", type=int, default=0, help="sample index")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_synth_view)

    p = _add(sub, "occlusion", "Write both occlusion masks for one sample.")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--index", type=int, default=0, help="sample index")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_occlusion)

    p = _add(sub, "gradcheck", "Finite-difference check of every op's gradient.")
    p.add_argument("--seeds", type=int, default=20, help="random seeds per case")
    p.add_argument("--cases", default=None,
                   help="comma-separated case names (default: all)")
    p.set_defaults(fn=cmd_gradcheck)

    p = _add(sub, "disc-curves", "CSV of disparity/depth level allocation curves.")
    p.add_argument("--levels", default="33,49", help="comma-separated level counts")
    p.add_argument("--mode", default="exp,linear", help="comma-separated modes")
    p.add_argument("--d-min", type=float, default=2.0)
    p.add_argument("--d-max", type=float, default=300.0)
    p.add_argument("--bf", type=float, default=389.4,
                   help="baseline times focal for the depth column")
    p.add_argument("--cap", type=float, default=80.0)
    p.add_argument("--out", default="disc_curves.csv", help="output CSV path")
    p.set_defaults(fn=cmd_disc_curves)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except SystemExit:
        raise
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
