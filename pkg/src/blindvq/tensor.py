"""Dense tensor arithmetic with reverse-mode automatic differentiation.

Everything is double precision numpy under the hood.  A ``Tensor`` wraps an
ndarray; operations build a computation graph (when gradient tracking is on)
out of closures, and ``backward`` replays it in reverse topological order.
The op set is exactly what a two-stream video quality network needs: 2D/3D
convolution, linear layers, ReLU, max pooling, mean/std pooling,
concatenation, temporal subsampling, and the scalar plumbing used by the
correlation losses.

Conventions:
  * convolution is cross-correlation (no kernel flip),
  * gradients accumulate until ``zero_grads`` resets them,
  * summations run in numpy's fixed row-major order, so identical inputs
    give bit-identical outputs across runs.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "ConvSpec",
    "ShapeError",
    "no_grad",
    "add",
    "sub",
    "mul",
    "div",
    "matmul",
    "relu",
    "sigmoid",
    "exp",
    "sqrt",
    "tsum",
    "tmean",
    "reshape",
    "moveaxis",
    "index",
    "concat",
    "temporal_subsample",
    "linear",
    "conv",
    "maxpool",
    "gap_gsp",
    "backward",
    "zero_grads",
    "sgd_step",
    "GSP_EPS",
]

# epsilon inside the std-pooling sqrt; keeps the gradient finite on
# constant feature maps
GSP_EPS = 1e-8

# cap on the number of doubles a single im2col-style buffer may hold
# (~256 MB); larger convolutions are processed in slabs along the first
# output axis
_CHUNK_ELEMS = 1 << 25


class ShapeError(ValueError):
    """Raised when operand extents do not line up."""


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (pure inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """N-dimensional double precision array with optional gradient tracking.

    ``data`` is always a float64 ndarray.  ``grad`` is lazily allocated on
    first backward pass and accumulates across passes.  ``frozen`` marks a
    parameter as excluded from optimizer updates.
    """

    __slots__ = ("data", "grad", "requires_grad", "frozen", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.frozen = False
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- conveniences -----------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self):
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _finite_or_raise(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{op} produced non-finite values")
    return arr


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap an op result; record the graph edge only when tracking is live."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise ops -------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def back(out):
        _accum(a, _unbroadcast(out.grad, a.shape))
        _accum(b, _unbroadcast(out.grad, b.shape))

    return _node(out_data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def back(out):
        _accum(a, _unbroadcast(out.grad, a.shape))
        _accum(b, _unbroadcast(-out.grad, b.shape))

    return _node(out_data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def back(out):
        _accum(a, _unbroadcast(out.grad * b.data, a.shape))
        _accum(b, _unbroadcast(out.grad * a.data, b.shape))

    return _node(out_data, (a, b), back)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data / b.data

    def back(out):
        _accum(a, _unbroadcast(out.grad / b.data, a.shape))
        _accum(b, _unbroadcast(-out.grad * a.data / (b.data * b.data), b.shape))

    return _node(out_data, (a, b), back)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    out_data = a.data**p

    def back(out):
        _accum(a, out.grad * p * a.data ** (p - 1.0))

    return _node(out_data, (a,), back)


def relu(a) -> Tensor:
    """Elementwise max(0, x); subgradient 0 at x == 0."""
    a = as_tensor(a)
    out_data = np.maximum(a.data, 0.0)

    def back(out):
        _accum(a, out.grad * (a.data > 0.0))

    return _node(out_data, (a,), back)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def back(out):
        _accum(a, out.grad * out_data)

    return _node(out_data, (a,), back)


def sigmoid(a) -> Tensor:
    """Numerically stable logistic function."""
    a = as_tensor(a)
    x = a.data
    out_data = np.empty_like(x)
    pos = x >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out_data[~pos] = ex / (1.0 + ex)

    def back(out):
        _accum(a, out.grad * out_data * (1.0 - out_data))

    return _node(out_data, (a,), back)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.sqrt(a.data)

    def back(out):
        _accum(a, out.grad * 0.5 / out_data)

    return _node(out_data, (a,), back)


# -- reductions and rearrangements -----------------------------------------


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def back(out):
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape).copy())

    return _node(out_data, (a,), back)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[i] for i in ax]))
    if count == 0:
        raise ShapeError("mean over an empty axis set")
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.reshape(shape)

    def back(out):
        _accum(a, out.grad.reshape(a.shape))

    return _node(out_data, (a,), back)


def moveaxis(a, src, dst) -> Tensor:
    a = as_tensor(a)
    out_data = np.moveaxis(a.data, src, dst)

    def back(out):
        _accum(a, np.moveaxis(out.grad, dst, src))

    return _node(out_data, (a,), back)


def index(a, idx) -> Tensor:
    """Basic (non-duplicating) slicing with gradient support."""
    a = as_tensor(a)
    out_data = a.data[idx]

    def back(out):
        g = np.zeros_like(a.data)
        g[idx] += out.grad
        _accum(a, g)

    return _node(out_data, (a,), back)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along ``axis``; all other extents must agree."""
    if len(xs) == 0:
        raise ShapeError("concat of an empty tensor list")
    xs = [as_tensor(x) for x in xs]
    first = xs[0].shape
    for x in xs[1:]:
        if x.ndim != xs[0].ndim or any(
            i != axis % xs[0].ndim and a != b for i, (a, b) in enumerate(zip(x.shape, first))
        ):
            raise ShapeError(f"concat extents mismatch off axis {axis}: {first} vs {x.shape}")
    out_data = np.concatenate([x.data for x in xs], axis=axis)
    offsets = np.cumsum([0] + [x.shape[axis] for x in xs])

    def back(out):
        for x, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * out.grad.ndim
            sl[axis] = slice(lo, hi)
            _accum(x, out.grad[tuple(sl)])

    return _node(out_data, tuple(xs), back)


def temporal_subsample(a, stride: int, axis: int = 0) -> Tensor:
    """Keep indices 0, stride, 2*stride, ... along ``axis``."""
    if stride < 1:
        raise ValueError(f"temporal stride must be >= 1, got {stride}")
    a = as_tensor(a)
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(None, None, stride)
    return index(a, tuple(sl))


# -- linear algebra ---------------------------------------------------------


def matmul(a, b) -> Tensor:
    """2D matrix product with gradients for both operands."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul wants 2D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def back(out):
        _accum(a, out.grad @ b.data.T)
        _accum(b, a.data.T @ out.grad)

    return _node(out_data, (a, b), back)


def linear(x, w, b) -> Tensor:
    """y = x @ w + b for x of shape (..., Din), w (Din, Dout), b (Dout,)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if w.ndim != 2:
        raise ShapeError(f"linear weight must be 2D, got {w.shape}")
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear inner extents differ: x {x.shape} vs w {w.shape}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"linear bias must have shape ({w.shape[1]},), got {b.shape}")
    lead = x.shape[:-1]
    flat = reshape(x, (-1, x.shape[-1])) if x.ndim != 2 else x
    y = add(matmul(flat, w), reshape(b, (1, -1)))
    if x.ndim != 2:
        y = reshape(y, lead + (w.shape[1],))
    return y


# -- convolution -------------------------------------------------------------


@dataclass(frozen=True)
class ConvSpec:
    """Declarative shape contract of one convolution layer.

    ``kernel``/``stride``/``padding`` are per-axis tuples, either (kH, kW)
    or (kT, kH, kW).  Output extent per axis follows
    floor((in + 2*pad - kernel) / stride) + 1.
    """

    kernel: tuple[int, ...]
    stride: tuple[int, ...]
    padding: tuple[int, ...]
    in_channels: int
    out_channels: int

    def __post_init__(self):
        nd = len(self.kernel)
        if nd not in (2, 3):
            raise ShapeError(f"ConvSpec supports 2 or 3 spatial axes, got {nd}")
        if len(self.stride) != nd or len(self.padding) != nd:
            raise ShapeError("kernel/stride/padding lengths disagree")
        if any(k < 1 for k in self.kernel) or any(s < 1 for s in self.stride):
            raise ShapeError("kernel and stride extents must be >= 1")
        if any(p < 0 for p in self.padding):
            raise ShapeError("padding must be non-negative")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ShapeError("channel counts must be >= 1")

    @property
    def ndim(self) -> int:
        return len(self.kernel)

    def out_extents(self, in_extents: Sequence[int]) -> tuple[int, ...]:
        if len(in_extents) != self.ndim:
            raise ShapeError(f"expected {self.ndim} spatial extents, got {len(in_extents)}")
        out = []
        for n, k, s, p in zip(in_extents, self.kernel, self.stride, self.padding):
            if n + 2 * p < k:
                raise ShapeError(f"extent {n} too small for kernel {k} with padding {p}")
            out.append((n + 2 * p - k) // s + 1)
        if any(o < 1 for o in out):
            raise ShapeError(f"zero-extent convolution output {tuple(out)}")
        return tuple(out)

    def weight_shape(self) -> tuple[int, ...]:
        return (self.out_channels, self.in_channels) + self.kernel


def _pad_spatial(x: np.ndarray, padding: Sequence[int], value: float = 0.0) -> np.ndarray:
    pads = [(0, 0), (0, 0)] + [(p, p) for p in padding]
    if all(p == 0 for p in padding):
        return x
    return np.pad(x, pads, mode="constant", constant_values=value)


def _windows(xp: np.ndarray, kernel: Sequence[int], stride: Sequence[int]) -> np.ndarray:
    """Strided view (N, C, *out, *kernel) over the padded input."""
    nd = len(kernel)
    v = sliding_window_view(xp, tuple(kernel), axis=tuple(range(2, 2 + nd)))
    sl = (slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)
    return v[sl]


def _corr(xp: np.ndarray, w: np.ndarray, stride: Sequence[int]) -> np.ndarray:
    """Cross-correlation of a padded input with w -> (N, Cout, *out).

    tensordot materializes an im2col copy of its first operand, so the
    leading output axis is processed in slabs that keep that copy bounded.
    """
    nd = w.ndim - 2
    win = _windows(xp, w.shape[2:], stride)
    caxes = [1] + list(range(2 + nd, 2 + 2 * nd))
    waxes = [1] + list(range(2, 2 + nd))
    lead = win.shape[2]
    per_lead = win.size // max(lead, 1)
    step = max(1, _CHUNK_ELEMS // max(per_lead, 1))
    if step >= lead:
        out = np.tensordot(win, w, axes=(caxes, waxes))
    else:
        parts = [
            np.tensordot(win[:, :, t0 : t0 + step], w, axes=(caxes, waxes))
            for t0 in range(0, lead, step)
        ]
        out = np.concatenate(parts, axis=1)
    return np.moveaxis(out, -1, 1)


def _corr_wgrad(xp: np.ndarray, gy: np.ndarray, kernel: Sequence[int], stride: Sequence[int]) -> np.ndarray:
    """dW[o, c, *k] = sum over batch and output positions of window * gy."""
    nd = len(kernel)
    win = _windows(xp, kernel, stride)
    gaxes = [0] + list(range(2, 2 + nd))
    lead = win.shape[2]
    per_lead = win.size // max(lead, 1)
    step = max(1, _CHUNK_ELEMS // max(per_lead, 1))
    if step >= lead:
        return np.tensordot(gy, win, axes=(gaxes, gaxes))
    acc = None
    for t0 in range(0, lead, step):
        part = np.tensordot(gy[:, :, t0 : t0 + step], win[:, :, t0 : t0 + step], axes=(gaxes, gaxes))
        acc = part if acc is None else acc + part
    return acc


def _corr_xgrad(
    gy: np.ndarray,
    w: np.ndarray,
    in_spatial: Sequence[int],
    stride: Sequence[int],
    padding: Sequence[int],
) -> np.ndarray:
    """Gradient w.r.t. the (unpadded) input: stride-dilate gy, pad, correlate
    with the channel-swapped spatially-flipped kernel, then crop the padding."""
    nd = w.ndim - 2
    n, cout = gy.shape[:2]
    out_sp = gy.shape[2:]
    dil = [(o - 1) * s + 1 for o, s in zip(out_sp, stride)]
    gd = np.zeros((n, cout, *dil), dtype=np.float64)
    gd[(slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)] = gy
    pads = [(0, 0), (0, 0)]
    for i in range(nd):
        k, s, p = w.shape[2 + i], stride[i], padding[i]
        full = in_spatial[i] + 2 * p
        right_extra = full - ((out_sp[i] - 1) * s + k)
        pads.append((k - 1, k - 1 + right_extra))
    gdp = np.pad(gd, pads, mode="constant")
    flip = (slice(None), slice(None)) + (slice(None, None, -1),) * nd
    w_t = np.ascontiguousarray(np.swapaxes(w[flip], 0, 1))
    dx_full = _corr(gdp, w_t, (1,) * nd)
    crop = (slice(None), slice(None)) + tuple(
        slice(p, p + ext) for p, ext in zip(padding, in_spatial)
    )
    return dx_full[crop]


def conv(x, spec: ConvSpec, weights, bias) -> Tensor:
    """Cross-correlate x (N, C, [T,] H, W) with weights (Cout, C, *kernel).

    Output extents follow ``spec.out_extents``; gradients flow to x,
    weights, and bias.
    """
    x, weights, bias = as_tensor(x), as_tensor(weights), as_tensor(bias)
    nd = spec.ndim
    if x.ndim != nd + 2:
        raise ShapeError(f"conv input must have {nd + 2} axes (N, C, ...), got shape {x.shape}")
    if x.shape[1] != spec.in_channels:
        raise ShapeError(f"conv input has {x.shape[1]} channels, spec wants {spec.in_channels}")
    if weights.shape != spec.weight_shape():
        raise ShapeError(f"conv weights shape {weights.shape} != spec {spec.weight_shape()}")
    if bias.shape != (spec.out_channels,):
        raise ShapeError(f"conv bias must have shape ({spec.out_channels},), got {bias.shape}")
    spec.out_extents(x.shape[2:])  # raises on undersized input / zero-extent output

    xp = _pad_spatial(x.data, spec.padding)
    out_data = _corr(xp, weights.data, spec.stride)
    out_data += bias.data.reshape((1, -1) + (1,) * nd)

    def back(out):
        gy = out.grad
        if weights.requires_grad:
            xp_b = _pad_spatial(x.data, spec.padding)
            _accum(weights, _corr_wgrad(xp_b, gy, spec.kernel, spec.stride))
        if bias.requires_grad:
            _accum(bias, gy.sum(axis=(0,) + tuple(range(2, 2 + nd))))
        if x.requires_grad:
            _accum(x, _corr_xgrad(gy, weights.data, x.shape[2:], spec.stride, spec.padding))

    return _node(out_data, (x, weights, bias), back)


def maxpool(x, kernel: tuple[int, ...], stride: tuple[int, ...], padding: tuple[int, ...]) -> Tensor:
    """Max pooling over the trailing spatial axes; -inf padding so padded
    cells never win.  Gradient routes to the first maximal element."""
    x = as_tensor(x)
    nd = len(kernel)
    if x.ndim != nd + 2:
        raise ShapeError(f"maxpool input must have {nd + 2} axes, got shape {x.shape}")
    for n, k, s, p in zip(x.shape[2:], kernel, stride, padding):
        if n + 2 * p < k:
            raise ShapeError(f"extent {n} too small for pooling kernel {k} with padding {p}")
    xp = _pad_spatial(x.data, padding, value=-np.inf)
    win = _windows(xp, kernel, stride)
    out_data = win.max(axis=tuple(range(-nd, 0)))

    def back(out):
        flat = win.reshape(out_data.shape + (-1,))
        am = flat.argmax(axis=-1)
        idx = np.arange(xp.size, dtype=np.int64).reshape(xp.shape)
        idx_win = _windows(idx, kernel, stride).reshape(out_data.shape + (-1,))
        winners = np.take_along_axis(idx_win, am[..., None], axis=-1)[..., 0]
        gxp = np.zeros(xp.size, dtype=np.float64)
        np.add.at(gxp, winners.ravel(), out.grad.ravel())
        gxp = gxp.reshape(xp.shape)
        crop = (slice(None), slice(None)) + tuple(
            slice(p, p + n) for p, n in zip(padding, x.shape[2:])
        )
        _accum(x, gxp[crop])

    return _node(out_data, (x,), back)


def gap_gsp(x, channel_axis: int = 0, reduce_axes: tuple[int, ...] | None = None) -> Tensor:
    """Global average + standard deviation pooling.

    Reduces ``reduce_axes`` (default: every axis except ``channel_axis``)
    and concatenates per-channel means with per-channel population standard
    deviations along the channel axis, doubling its extent.  The std is
    sqrt(mean((x - mu)^2) + eps) with eps = 1e-8 so the gradient stays
    finite on constant maps.
    """
    x = as_tensor(x)
    channel_axis = channel_axis % x.ndim
    if reduce_axes is None:
        reduce_axes = tuple(i for i in range(x.ndim) if i != channel_axis)
    else:
        reduce_axes = tuple(a % x.ndim for a in reduce_axes)
    if len(reduce_axes) == 0:
        raise ShapeError("gap_gsp needs at least one reduce axis")
    if channel_axis in reduce_axes:
        raise ShapeError("cannot reduce over the channel axis")
    count = int(np.prod([x.shape[a] for a in reduce_axes]))
    if count == 0:
        raise ShapeError("gap_gsp over an empty reduce set")
    mu_keep = tmean(x, axis=reduce_axes, keepdims=True)
    centered = sub(x, mu_keep)
    var = tmean(mul(centered, centered), axis=reduce_axes, keepdims=True)
    std = sqrt(add(var, GSP_EPS))
    pooled = concat([mu_keep, std], axis=channel_axis)
    squeeze = tuple(a for a in range(x.ndim) if a in reduce_axes)
    new_shape = [pooled.shape[i] for i in range(x.ndim) if i not in squeeze]
    return reshape(pooled, tuple(new_shape))


# -- backward pass and optimizer --------------------------------------------


def backward(loss: Tensor) -> None:
    """Reverse-mode pass from a scalar loss.

    Leaf tensors (parameters, inputs) accumulate gradients across calls;
    interior node gradients are per-pass scratch and are reset here, so a
    second backward on the same graph adds exactly the same contribution.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))
    for node in topo:
        if node._backward is not None:
            node.grad = None
    if loss.grad is None:
        loss.grad = np.zeros_like(loss.data)
    loss.grad = loss.grad + np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node)


def zero_grads(params: Iterable[Tensor]) -> None:
    """Reset accumulated gradients."""
    for p in params:
        p.grad = None


def sgd_step(params: Iterable[Tensor], lr: float) -> None:
    """In-place p <- p - lr * grad for every unfrozen parameter with a
    gradient; frozen parameters stay bit-identical."""
    if lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    for p in params:
        if p.frozen or p.grad is None:
            continue
        if p.grad.shape != p.data.shape:
            raise ShapeError(f"gradient shape {p.grad.shape} != parameter shape {p.data.shape}")
        p.data -= lr * p.grad


def he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    """Seeded He-uniform draw: U(-sqrt(6/fan_in), +sqrt(6/fan_in))."""
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)
