"""Differentiable array ops on [B, C, H, W] tensors: conv, softmax, resampling.

Backward rules are hand-derived; the finite-difference harness in gradcheck
exercises every op here, including strided and rectangular conv cases.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, accumulate, record


def reshape(x: Tensor, shape) -> Tensor:
    in_shape = x.data.shape
    out = Tensor(x.data.reshape(shape))

    def backward(g):
        accumulate(x, g.reshape(in_shape))

    return record(out, (x,), backward)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Slice `length` entries from `start` along one axis."""
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = Tensor(x.data[idx])

    def backward(g):
        buf = np.zeros_like(x.data)
        buf[idx] = g
        accumulate(x, buf)

    return record(out, (x,), backward)


def flip_w(x: Tensor) -> Tensor:
    """Horizontal mirror (last axis). Its own inverse."""
    out = Tensor(np.flip(x.data, axis=-1).copy())

    def backward(g):
        accumulate(x, np.flip(g, axis=-1))

    return record(out, (x,), backward)


def concat_channels(parts: list[Tensor]) -> Tensor:
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    sizes = [p.data.shape[1] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, a, b in zip(parts, offsets[:-1], offsets[1:]):
            accumulate(p, g[:, a:b])

    return record(out, tuple(parts), backward)


def pad2d(x: Tensor, ph: int, pw: int) -> Tensor:
    out = Tensor(np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))))

    def backward(g):
        accumulate(x, g[:, :, ph:g.shape[2] - ph, pw:g.shape[3] - pw]
                   if ph or pw else g)

    return record(out, (x,), backward)


def grad_x(x: Tensor) -> Tensor:
    """Forward difference along width; output is one column narrower."""
    out = Tensor(x.data[..., 1:] - x.data[..., :-1])

    def backward(g):
        buf = np.zeros_like(x.data)
        buf[..., 1:] += g
        buf[..., :-1] -= g
        accumulate(x, buf)

    return record(out, (x,), backward)


def grad_y(x: Tensor) -> Tensor:
    """Forward difference along height; output is one row shorter."""
    out = Tensor(x.data[..., 1:, :] - x.data[..., :-1, :])

    def backward(g):
        buf = np.zeros_like(x.data)
        buf[..., 1:, :] += g
        buf[..., :-1, :] -= g
        accumulate(x, buf)

    return record(out, (x,), backward)


def upsample_nearest2x(x: Tensor) -> Tensor:
    out = Tensor(np.repeat(np.repeat(x.data, 2, axis=-2), 2, axis=-1))

    def backward(g):
        b, c, h2, w2 = g.shape
        accumulate(x, g.reshape(b, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5)))

    return record(out, (x,), backward)


def upsample_zero_stuff(x: Tensor, factor: int = 2) -> Tensor:
    """Transposed-stride upsample: input values land on a stride grid, zeros between."""
    b, c, h, w = x.data.shape
    buf = np.zeros((b, c, h * factor, w * factor), dtype=x.data.dtype)
    buf[:, :, ::factor, ::factor] = x.data
    out = Tensor(buf)

    def backward(g):
        accumulate(x, g[:, :, ::factor, ::factor])

    return record(out, (x,), backward)


def _linear_indices(n_in: int, n_out: int):
    # align_corners=False convention with edge clamping
    pos = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    i0 = np.floor(pos).astype(np.int64)
    frac = pos - i0
    i0c = np.clip(i0, 0, n_in - 1)
    i1c = np.clip(i0 + 1, 0, n_in - 1)
    return i0c, i1c, frac


def upsample_bilinear2x(x: Tensor) -> Tensor:
    b, c, h, w = x.data.shape
    r0, r1, rf = _linear_indices(h, 2 * h)
    c0, c1, cf = _linear_indices(w, 2 * w)
    rf_ = rf.astype(x.data.dtype)[:, None]
    cf_ = cf.astype(x.data.dtype)

    def interp(a):
        rows = a[:, :, r0, :] * (1.0 - rf_) + a[:, :, r1, :] * rf_
        return rows[:, :, :, c0] * (1.0 - cf_) + rows[:, :, :, c1] * cf_

    out = Tensor(interp(x.data))

    def backward(g):
        # adjoint of the two gathers, applied in reverse order
        rows = np.zeros((b, c, 2 * h, w), dtype=g.dtype)
        np.add.at(rows, (slice(None), slice(None), slice(None), c0), g * (1.0 - cf_))
        np.add.at(rows, (slice(None), slice(None), slice(None), c1), g * cf_)
        gx = np.zeros_like(x.data)
        np.add.at(gx, (slice(None), slice(None), r0, slice(None)), rows * (1.0 - rf_))
        np.add.at(gx, (slice(None), slice(None), r1, slice(None)), rows * rf_)
        accumulate(x, gx)

    return record(out, (x,), backward)


def softmax_channels(x: Tensor) -> Tensor:
    """Softmax across channel axis 1, max-subtracted for stability."""
    if not np.all(np.isfinite(x.data)):
        raise ValueError("softmax_channels: input contains non-finite values")
    m = x.data.max(axis=1, keepdims=True)
    e = np.exp(x.data - m)
    s = e / e.sum(axis=1, keepdims=True)
    out = Tensor(s)

    def backward(g):
        dot = (g * s).sum(axis=1, keepdims=True)
        accumulate(x, s * (g - dot))

    return record(out, (x,), backward)


def layernorm_channels(x: Tensor, gain: Tensor, bias: Tensor,
                       eps: float = 1e-5) -> Tensor:
    """Per-pixel normalization across channel axis 1 with per-channel affine.

    Output channels have zero mean and unit variance (up to eps) at every
    pixel before the affine; gain/bias are [C] vectors.
    """
    if x.data.ndim != 4:
        raise ValueError(f"layernorm_channels: input must be 4-D, got {x.data.shape}")
    c = x.data.shape[1]
    if gain.data.shape != (c,) or bias.data.shape != (c,):
        raise ValueError(
            f"layernorm_channels: gain/bias must be ({c},), got "
            f"{gain.data.shape} and {bias.data.shape}")
    mu = x.data.mean(axis=1, keepdims=True)
    d = x.data - mu
    inv = 1.0 / np.sqrt((d * d).mean(axis=1, keepdims=True) + eps)
    y = d * inv
    gc = gain.data.reshape(1, c, 1, 1)
    out = Tensor(gc * y + bias.data.reshape(1, c, 1, 1))

    def backward(g):
        accumulate(gain, (g * y).sum(axis=(0, 2, 3)))
        accumulate(bias, g.sum(axis=(0, 2, 3)))
        gy = g * gc
        accumulate(x, inv * (gy - gy.mean(axis=1, keepdims=True)
                             - y * (gy * y).mean(axis=1, keepdims=True)))

    return record(out, (x, gain, bias), backward)


def _window_view(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    v = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return v[:, :, ::stride, ::stride]


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation over [B, Cin, H, W] with weight [Cout, Cin, kh, kw]."""
    if x.data.ndim != 4:
        raise ValueError(f"conv2d: input must be 4-D [B,C,H,W], got {x.data.shape}")
    if w.data.ndim != 4:
        raise ValueError(f"conv2d: weight must be 4-D [Cout,Cin,kh,kw], got {w.data.shape}")
    cout, cin, kh, kw = w.data.shape
    if x.data.shape[1] != cin:
        raise ValueError(
            f"conv2d: input channels {x.data.shape[1]} != weight in_channels {cin}")
    if b is not None and b.data.shape != (cout,):
        raise ValueError(f"conv2d: bias shape {b.data.shape} != ({cout},)")

    bs = x.data.shape[0]
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    hp, wp = xp.shape[2], xp.shape[3]
    if hp < kh or wp < kw:
        raise ValueError(f"conv2d: padded input {hp}x{wp} smaller than kernel {kh}x{kw}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    win = _window_view(xp, kh, kw, stride)              # [B,Cin,Ho,Wo,kh,kw]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(bs * ho * wo, cin * kh * kw)
    wmat = w.data.reshape(cout, cin * kh * kw)
    y = (cols @ wmat.T).reshape(bs, ho, wo, cout).transpose(0, 3, 1, 2)
    if b is not None:
        y = y + b.data[:, None, None]
    out = Tensor(np.ascontiguousarray(y))

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(bs * ho * wo, cout)
        if w.requires_grad:
            win_b = _window_view(xp, kh, kw, stride)
            cols_b = win_b.transpose(0, 2, 3, 1, 4, 5).reshape(bs * ho * wo, cin * kh * kw)
            accumulate(w, (gmat.T @ cols_b).reshape(w.data.shape))
        if x.requires_grad:
            gwin = (gmat @ wmat).reshape(bs, ho, wo, cin, kh, kw).transpose(0, 3, 1, 2, 4, 5)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + ho * stride:stride, j:j + wo * stride:stride] += gwin[:, :, :, :, i, j]
            accumulate(x, gxp[:, :, padding:padding + x.data.shape[2],
                              padding:padding + x.data.shape[3]])
        if b is not None and b.requires_grad:
            accumulate(b, g.sum(axis=(0, 2, 3)))

    inputs = (x, w) if b is None else (x, w, b)
    return record(out, inputs, backward)
