"""Reverse-mode automatic differentiation on numpy arrays.

A Tensor wraps an ndarray; differentiable operations record a backward
closure on the active Tape. Tapes are explicit: operations executed with no
active tape run forward-only, which doubles as inference / detach mode.
Creation order is a topological order, so Tape.backward replays the recorded
nodes in reverse and visits each exactly once, accumulating into .grad.

Training runs in float32; the gradient-check harness feeds float64 leaves
through the same dtype-preserving ops. Scalar constants must stay python
floats: numpy 2.x keeps float32 arrays float32 under python-float arithmetic
but upcasts under numpy float64 scalars.
"""

from __future__ import annotations

import numpy as np

_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of differentiable operations for one backward pass."""

    def __init__(self):
        self._nodes: list[tuple[Tensor, callable]] = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.pop()
        return False

    def __len__(self):
        return len(self._nodes)

    def record(self, out: "Tensor", backward) -> None:
        self._nodes.append((out, backward))

    def backward(self, root: "Tensor") -> None:
        """Seed d(root)/d(root) = 1 and propagate through the tape in reverse."""
        if root.data.size != 1:
            raise ValueError(f"backward root must be scalar, got shape {root.data.shape}")
        root.grad = np.ones_like(root.data)
        for out, fn in reversed(self._nodes):
            if out.grad is not None:
                fn(out.grad)

    def clear(self) -> None:
        self._nodes.clear()


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class _NoGrad:
    """Masks any outer tape so enclosed ops run forward-only."""

    def __enter__(self):
        _TAPE_STACK.append(None)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.pop()
        return False


def no_grad() -> _NoGrad:
    return _NoGrad()


class Tensor:
    """ndarray with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is not None:
            arr = np.asarray(data, dtype=dtype)
        else:
            arr = np.asarray(data)
            if arr.dtype not in (np.float32, np.float64):
                arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # arithmetic

    def __add__(self, other):
        return _binary(self, other, np.add, lambda g, a, b: (g, g))

    __radd__ = __add__

    def __mul__(self, other):
        return _binary(self, other, np.multiply,
                       lambda g, a, b: (g * b.data, g * a.data))

    __rmul__ = __mul__

    def __sub__(self, other):
        return _binary(self, other, np.subtract, lambda g, a, b: (g, -g))

    def __rsub__(self, other):
        return _binary(_wrap(other, self.dtype), self, np.subtract,
                       lambda g, a, b: (g, -g))

    def __truediv__(self, other):
        return _binary(self, other, np.divide,
                       lambda g, a, b: (g / b.data, -g * a.data / (b.data * b.data)))

    def __rtruediv__(self, other):
        return _binary(_wrap(other, self.dtype), self, np.divide,
                       lambda g, a, b: (g / b.data, -g * a.data / (b.data * b.data)))

    def __neg__(self):
        return _unary(self, lambda x: -x, lambda g, x, out: -g)

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("only scalar exponents are supported")
        p = float(p)
        return _unary(self, lambda x: x ** p,
                      lambda g, x, out: g * p * x ** (p - 1.0))

    # elementwise

    def abs(self):
        return _unary(self, np.abs, lambda g, x, out: g * np.sign(x))

    def exp(self):
        return _unary(self, np.exp, lambda g, x, out: g * out)

    def log(self):
        return _unary(self, np.log, lambda g, x, out: g / x)

    def relu(self):
        return _unary(self, lambda x: np.maximum(x, 0.0),
                      lambda g, x, out: g * (x > 0.0))

    def elu(self):
        def fwd(x):
            # clamp before expm1: the positive branch is discarded but still evaluated
            return np.where(x > 0.0, x, np.expm1(np.minimum(x, 0.0)))

        def bwd(g, x, out):
            return g * np.where(x > 0.0, 1.0, np.exp(np.minimum(x, 0.0)))

        return _unary(self, fwd, bwd)

    def maximum(self, c: float):
        c = float(c)
        return _unary(self, lambda x: np.maximum(x, c),
                      lambda g, x, out: g * (x > c))

    def clamp(self, lo: float, hi: float):
        lo, hi = float(lo), float(hi)
        return _unary(self, lambda x: np.clip(x, lo, hi),
                      lambda g, x, out: g * ((x > lo) & (x < hi)))

    # reductions

    def sum(self, axis=None, keepdims: bool = False):
        in_shape = self.data.shape

        def bwd(g, x, out):
            if axis is None:
                return np.broadcast_to(g, in_shape).astype(g.dtype, copy=False)
            gg = g
            if not keepdims:
                gg = np.expand_dims(g, axis if isinstance(axis, tuple) else (axis,))
            return np.broadcast_to(gg, in_shape)

        return _unary(self, lambda x: np.sum(x, axis=axis, keepdims=keepdims), bwd)

    def mean(self, axis=None, keepdims: bool = False):
        if self.data.size == 0:
            raise ValueError("mean of an empty tensor")
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcasted gradient back down to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def record(out: Tensor, inputs: tuple, backward) -> Tensor:
    """Attach out to the active tape when any input participates in grad."""
    tape = active_tape()
    if tape is not None and any(i.requires_grad for i in inputs):
        out.requires_grad = True
        tape.record(out, backward)
    return out


def _unary(a: Tensor, fwd, bwd) -> Tensor:
    out = Tensor(fwd(a.data))
    x = a.data

    def backward(g):
        accumulate(a, bwd(g, x, out.data))

    return record(out, (a,), backward)


def _binary(a, b, fwd, bwd) -> Tensor:
    if not isinstance(a, Tensor):
        a = _wrap(a, b.dtype)
    if not isinstance(b, Tensor):
        b = _wrap(b, a.dtype)
    out = Tensor(fwd(a.data, b.data))

    def backward(g):
        ga, gb = bwd(g, a, b)
        accumulate(a, _unbroadcast(ga, a.data.shape))
        accumulate(b, _unbroadcast(gb, b.data.shape))

    return record(out, (a, b), backward)
