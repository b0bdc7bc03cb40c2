"""Finite-difference verification of every differentiable operation.

Each case builds small float64 inputs, runs the op under a tape, and checks
the analytic gradient of a random linear probe of the output against central
differences (eps = 1e-4). The probe weights are drawn per seed so backward
bugs cannot hide behind symmetric reductions. Inputs for kinked ops (relu,
abs, clamp, ...) are sampled away from their non-smooth points, where the
derivative exists and finite differences are meaningful.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from . import ops
from .autodiff import Tape, Tensor
from .levels import make_levels
from .losses import (FeatureExtractor, mirror_loss, reconstruction_loss,
                     smoothness_loss, total_loss)
from .occlusion import MirroredDisparity, OcclusionMask
from .volume import DispVolume, disparity_from_volume, synthesize_view
from .warp import WarpDirection, shift_sample, shift_stack, warp_volume

EPS = 1e-4
TOL = 1e-4
DENOM_FLOOR = 1e-2


@dataclass(frozen=True)
class CheckResult:
    name: str
    seeds: int
    coords: int
    max_rel: float
    skipped: int = 0
    tol: float = TOL

    @property
    def passed(self) -> bool:
        # a case that skipped most of its coordinates proves nothing
        return self.max_rel <= self.tol and self.skipped <= self.coords

    def line(self) -> str:
        status = "ok" if self.passed else "FAIL"
        skip = f" skipped={self.skipped}" if self.skipped else ""
        return (f"{self.name:<28} seeds={self.seeds:<3} coords={self.coords:<6} "
                f"max_rel={self.max_rel:.3e}{skip}  {status}")


def _away_from(rng, shape, points, lo=-1.2, hi=1.2, margin=1e-3):
    """Uniform samples at least `margin` away from each kink point."""
    x = rng.uniform(lo, hi, size=shape)
    for p in points:
        close = np.abs(x - p) < margin
        while np.any(close):
            x[close] = rng.uniform(lo, hi, size=int(close.sum()))
            close = np.abs(x - p) < margin
    return x


def _t(arr) -> Tensor:
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


def check_case(builder, seeds: int = 20, eps: float = EPS,
               max_coords: int | None = None, rng_base: int = 0,
               kink_filter: bool = False) -> tuple[float, int, int]:
    """(max relative error, coordinates checked, coordinates skipped).

    With `kink_filter`, each coordinate is measured at two step sizes; a
    coordinate whose estimates disagree sits on a non-smooth point (an abs
    or relu argument crossing zero within the step), where no derivative
    comparison is meaningful, and is skipped. Smooth coordinates always
    agree to O(eps^2), so a wrong backward rule still fails on them.
    """
    worst = 0.0
    total = 0
    skipped = 0
    for s in range(seeds):
        rng = np.random.default_rng([rng_base, s])
        inputs, fn = builder(rng)
        with Tape() as tape:
            out = fn(*inputs)
            probe = Tensor(rng.normal(size=out.data.shape))
            loss = (out * probe).sum()
            tape.backward(loss)
        analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                    for p in inputs]

        def loss_value():
            return float((fn(*inputs).data * probe.data).sum())

        def central(flat, ci, orig, h):
            flat[ci] = orig + h
            f_plus = loss_value()
            flat[ci] = orig - h
            f_minus = loss_value()
            flat[ci] = orig
            return (f_plus - f_minus) / (2.0 * h)

        for p, a in zip(inputs, analytic):
            flat = p.data.reshape(-1)
            n = flat.shape[0]
            if max_coords is not None and n > max_coords:
                coords = rng.choice(n, size=max_coords, replace=False)
            else:
                coords = range(n)
            for ci in coords:
                orig = flat[ci]
                numeric = central(flat, ci, orig, eps)
                if kink_filter:
                    refined = central(flat, ci, orig, eps / 2.0)
                    gap = abs(numeric - refined) / max(abs(numeric),
                                                       abs(refined), DENOM_FLOOR)
                    if gap > 3e-5:
                        skipped += 1
                        continue
                    numeric = refined
                av = a.reshape(-1)[ci]
                rel = abs(av - numeric) / max(abs(av), abs(numeric), DENOM_FLOOR)
                worst = max(worst, rel)
                total += 1
    return worst, total, skipped


# case builders

def _case_binary(op):
    def build(rng):
        a = _t(rng.normal(size=(2, 3, 4)))
        b = _t(_away_from(rng, (2, 3, 4), [0.0], lo=0.4, hi=1.6)
               * rng.choice([-1.0, 1.0], size=(2, 3, 4)))
        return [a, b], op
    return build


def _case_broadcast(op):
    def build(rng):
        a = _t(rng.normal(size=(2, 3, 4, 5)))
        b = _t(_away_from(rng, (1, 3, 1, 1), [0.0], lo=0.4, hi=1.6))
        return [a, b], op
    return build


def _case_unary(op, sampler):
    def build(rng):
        return [_t(sampler(rng))], op
    return build


def _conv_case(stride, padding, kh=3, kw=3, cin=2, cout=3, h=6, w=7):
    def build(rng):
        x = _t(rng.normal(size=(2, cin, h, w)))
        wt = _t(rng.normal(size=(cout, cin, kh, kw)) * 0.5)
        b = _t(rng.normal(size=(cout,)) * 0.2)
        return [x, wt, b], lambda xx, ww, bb: ops.conv2d(
            xx, ww, bb, stride=stride, padding=padding)
    return build


def _volume_case(rng):
    levels = make_levels(4, 1.0, 5.0)
    logits = _t(rng.normal(size=(1, 4, 5, 6)))

    def fn(lg):
        vol = DispVolume(ops.softmax_channels(lg), levels, "left")
        return disparity_from_volume(vol)
    return [logits], fn


def _synth_case(rng):
    levels = make_levels(4, 1.0, 4.0)
    img = _t(rng.uniform(0.1, 0.9, size=(1, 2, 5, 8)))
    logits = _t(rng.normal(size=(1, 4, 5, 8)))

    def fn(im, lg):
        synth, _ = synthesize_view(im, lg, levels, WarpDirection.LTOR)
        return synth
    return [img, logits], fn


def _signed(rng, shape, lo, hi):
    return rng.uniform(lo, hi, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _rec_case(with_features):
    def build(rng):
        # keep |synth - target| off the abs kink everywhere
        target_arr = rng.uniform(0.2, 0.8, size=(1, 3, 6, 8))
        synth = _t(target_arr + _signed(rng, target_arr.shape, 0.05, 0.3))
        target = Tensor(target_arr)
        mask = OcclusionMask(Tensor((rng.uniform(size=(1, 1, 6, 8)) > 0.4)
                                    .astype(np.float64)), "right")
        extractor = FeatureExtractor(seed=3, widths=(4, 6)) if with_features else None
        alpha = 0.01 if with_features else 0.0

        def fn(sy):
            return reconstruction_loss(sy, target, mask, extractor, alpha)
        return [synth], fn
    return build


def _ramp2d(rng, h, w, lo, hi):
    """Separable ramp whose axis differences all have magnitude >= lo."""
    sx = np.concatenate([[0.0], np.cumsum(_signed(rng, w - 1, lo, hi))])
    sy = np.concatenate([[0.0], np.cumsum(_signed(rng, h - 1, lo, hi))])
    return sx[None, :] + sy[:, None]


def _smooth_case(rng):
    h, w = 5, 7
    disp = _t(_ramp2d(rng, h, w, 0.1, 0.5)[None, None] + 3.0)
    img = _t(np.stack([_ramp2d(rng, h, w, 0.05, 0.2) for _ in range(3)])[None])
    return [disp, img], lambda d, i: smoothness_loss(d, i, gamma=2.0)


def _mirror_case(rng):
    disp_arr = rng.uniform(1.0, 4.0, size=(2, 1, 4, 6))
    disp = _t(disp_arr)
    mirrored = MirroredDisparity(
        Tensor(disp_arr + _signed(rng, disp_arr.shape, 0.05, 0.5)))
    mask = OcclusionMask(Tensor((rng.uniform(size=(2, 1, 4, 6)) > 0.5)
                                .astype(np.float64)), "left")
    return [disp], lambda d: mirror_loss(d, mirrored, mask)


def _network_case(rng):
    from .network import DispNet, NetworkConfig
    from .occlusion import ones_mask

    config = NetworkConfig(stages=3, base_channels=4, level_count=5)
    levels = make_levels(5, 1.0, 5.0)
    model = DispNet(config, seed=int(rng.integers(1 << 16)))
    params = list(model.params.values())
    for p in params:
        p.data = p.data.astype(np.float64)
    left = Tensor(rng.uniform(0.3, 0.9, size=(1, 3, 8, 12)).astype(np.float64))
    # zero target keeps |synth - target| off the abs kink: synth is positive
    # wherever any warped sample lands and identically zero elsewhere
    right = Tensor(np.zeros((1, 3, 8, 12)))

    def fn(*_):
        logits_l = model.forward(left)
        synth_r, _ = synthesize_view(left, logits_l, levels, WarpDirection.LTOR)
        vol_l = DispVolume(ops.softmax_channels(logits_l), levels, "left")
        d_l = disparity_from_volume(vol_l)
        mask = ones_mask((1, 1, 8, 12), "right", dtype=np.float64)
        rec = reconstruction_loss(synth_r, right, mask)
        ds = smoothness_loss(d_l, left)
        zero = Tensor(np.zeros((), dtype=np.float64))
        return total_loss(rec, rec, zero, zero, ds, ds, alpha_ds=0.0008)
    return params, fn


def build_registry() -> dict:
    reg: dict[str, tuple] = {}

    def put(name, builder, max_coords=None, kink_filter=False):
        reg[name] = (builder, max_coords, kink_filter)

    put("add", _case_binary(lambda a, b: a + b))
    put("sub", _case_binary(lambda a, b: a - b))
    put("mul", _case_binary(lambda a, b: a * b))
    put("div", _case_binary(lambda a, b: a / b))
    put("add_broadcast", _case_broadcast(lambda a, b: a + b))
    put("mul_broadcast", _case_broadcast(lambda a, b: a * b))
    put("scalar_affine", _case_unary(lambda x: x * 3.0 + 0.7 - 2.0 * x,
                                     lambda rng: rng.normal(size=(3, 4))))
    put("neg", _case_unary(lambda x: -x, lambda rng: rng.normal(size=(3, 4))))
    put("square", _case_unary(lambda x: x ** 2, lambda rng: rng.normal(size=(3, 4))))
    put("abs", _case_unary(lambda x: x.abs(),
                           lambda rng: _away_from(rng, (3, 5), [0.0])))
    put("exp", _case_unary(lambda x: x.exp(), lambda rng: rng.normal(size=(3, 4))))
    put("log", _case_unary(lambda x: x.log(),
                           lambda rng: rng.uniform(0.2, 2.0, size=(3, 4))))
    put("relu", _case_unary(lambda x: x.relu(),
                            lambda rng: _away_from(rng, (4, 5), [0.0])))
    put("elu", _case_unary(lambda x: x.elu(),
                           lambda rng: _away_from(rng, (4, 5), [0.0])))
    put("maximum_const", _case_unary(lambda x: x.maximum(0.3),
                                     lambda rng: _away_from(rng, (4, 5), [0.3])))
    put("clamp", _case_unary(lambda x: x.clamp(-0.5, 0.5),
                             lambda rng: _away_from(rng, (4, 5), [-0.5, 0.5])))
    put("sum_all", _case_unary(lambda x: x.sum(), lambda rng: rng.normal(size=(3, 4))))
    put("sum_axis", _case_unary(lambda x: x.sum(axis=1, keepdims=True),
                                lambda rng: rng.normal(size=(2, 3, 4))))
    put("mean_axes", _case_unary(lambda x: x.mean(axis=(1, 3)),
                                 lambda rng: rng.normal(size=(2, 3, 2, 4))))
    put("reshape", _case_unary(lambda x: ops.reshape(x, (2, 12)),
                               lambda rng: rng.normal(size=(2, 3, 4))))
    put("narrow", _case_unary(lambda x: ops.narrow(x, 1, 1, 2),
                              lambda rng: rng.normal(size=(2, 4, 3, 3))))
    put("flip_w", _case_unary(lambda x: ops.flip_w(x),
                              lambda rng: rng.normal(size=(2, 2, 3, 5))))
    put("pad2d", _case_unary(lambda x: ops.pad2d(x, 1, 2),
                             lambda rng: rng.normal(size=(2, 2, 3, 4))))
    put("grad_x", _case_unary(lambda x: ops.grad_x(x),
                              lambda rng: rng.normal(size=(2, 2, 3, 5))))
    put("grad_y", _case_unary(lambda x: ops.grad_y(x),
                              lambda rng: rng.normal(size=(2, 2, 4, 3))))
    put("concat_channels", _case_binary(
        lambda a, b: ops.concat_channels([ops.reshape(a, (2, 3, 4, 1)),
                                          ops.reshape(b, (2, 3, 4, 1))])))
    put("upsample_nearest2x", _case_unary(lambda x: ops.upsample_nearest2x(x),
                                          lambda rng: rng.normal(size=(1, 2, 3, 4))))
    put("upsample_bilinear2x", _case_unary(lambda x: ops.upsample_bilinear2x(x),
                                           lambda rng: rng.normal(size=(1, 2, 3, 4))))
    put("upsample_zero_stuff", _case_unary(lambda x: ops.upsample_zero_stuff(x, 2),
                                           lambda rng: rng.normal(size=(1, 2, 3, 4))))
    put("softmax_channels", _case_unary(lambda x: ops.softmax_channels(x),
                                        lambda rng: rng.normal(size=(2, 5, 3, 4))))

    def _layernorm_case(rng):
        x = _t(rng.normal(size=(2, 5, 3, 4)))
        g = _t(rng.uniform(0.5, 1.5, size=(5,)))
        b = _t(rng.normal(size=(5,)) * 0.3)
        return [x, g, b], lambda xx, gg, bb: ops.layernorm_channels(xx, gg, bb)

    put("layernorm_channels", _layernorm_case)
    put("conv2d_s1", _conv_case(stride=1, padding=1))
    put("conv2d_s2", _conv_case(stride=2, padding=1))
    put("conv2d_nopad", _conv_case(stride=1, padding=0))
    put("conv2d_rect", _conv_case(stride=2, padding=1, kh=3, kw=5, h=7, w=9))
    put("shift_int", _case_unary(
        lambda x: shift_sample(x, 2.0, WarpDirection.LTOR),
        lambda rng: rng.normal(size=(1, 2, 3, 7))))
    put("shift_frac", _case_unary(
        lambda x: shift_sample(x, 1.6, WarpDirection.RTOL),
        lambda rng: rng.normal(size=(1, 2, 3, 7))))
    levels4 = make_levels(4, 1.0, 4.0)
    put("warp_volume", _case_unary(
        lambda x: warp_volume(x, levels4.values, WarpDirection.LTOR),
        lambda rng: rng.normal(size=(1, 4, 3, 8))))
    put("shift_stack", _case_unary(
        lambda x: shift_stack(x, levels4.values, WarpDirection.RTOL),
        lambda rng: rng.normal(size=(1, 2, 3, 8))))
    put("disparity_from_volume", _volume_case)
    put("synthesize_view", _synth_case, max_coords=96)
    put("reconstruction_l1", _rec_case(False))
    # feature relu kinks make isolated coordinates non-smooth; filtered
    put("reconstruction_perceptual", _rec_case(True), max_coords=96,
        kink_filter=True)
    put("smoothness", _smooth_case)
    put("mirror", _mirror_case)
    # untrained nets put neighboring disparities near the smoothness kink
    put("network_end_to_end", _network_case, max_coords=4, kink_filter=True)
    return reg


def run_checks(names: list[str] | None = None, seeds: int = 20) -> list[CheckResult]:
    registry = build_registry()
    if names:
        unknown = [n for n in names if n not in registry]
        if unknown:
            raise ValueError(f"unknown gradcheck case {unknown[0]!r}; "
                             f"known: {', '.join(sorted(registry))}")
        items = [(n, registry[n]) for n in names]
    else:
        items = list(registry.items())
    results = []
    for name, (builder, max_coords, kink_filter) in items:
        base = zlib.crc32(name.encode("utf-8"))
        worst, total, skipped = check_case(builder, seeds=seeds,
                                           max_coords=max_coords,
                                           rng_base=base,
                                           kink_filter=kink_filter)
        results.append(CheckResult(name, seeds, total, worst, skipped))
    return results
