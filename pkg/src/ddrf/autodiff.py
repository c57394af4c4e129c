"""Reverse-mode differentiable arrays.

A :class:`DiffArray` wraps a float64 numpy array. Arrays created with
``requires_grad=True`` are leaves (parameters) and carry a node id. While a
:class:`GradientTape` is active, every primitive with at least one tracked
input appends one entry to the tape; replaying the tape backwards is a
reverse topological traversal of the graph.

Outside a tape nothing is recorded, so inference allocates no graph and may
run on several threads at once (the active tape is thread-local).

Convolution uses cross-correlation (no kernel flip).
"""

from __future__ import annotations

import itertools
import os
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

from . import _accel

_node_ids = itertools.count(1)
_local = threading.local()

# cap on im2col elements per chunk when nothing is being recorded
_INFERENCE_COLS_BUDGET = 1 << 23
# the large-image conv runs in float32 (output stored as float64) unless this is set
_INFERENCE_FLOAT64 = os.environ.get("DDRF_FLOAT64_INFERENCE", "").strip().lower() in {"1", "true", "yes", "on"}


class DiffArray:
    """Float64 array that may participate in a gradient graph."""

    __slots__ = ("values", "node")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.node = next(_node_ids) if requires_grad else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def requires_grad(self) -> bool:
        return self.node is not None

    def numpy(self) -> np.ndarray:
        return self.values

    def __repr__(self) -> str:
        tag = f", node={self.node}" if self.node is not None else ""
        return f"DiffArray(shape={self.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(values) -> DiffArray:
    """Leaf array whose gradient is tracked."""
    return DiffArray(np.array(values, dtype=np.float64), requires_grad=True)


def constant(values) -> DiffArray:
    return values if isinstance(values, DiffArray) else DiffArray(values)


def detach(x: DiffArray) -> DiffArray:
    return DiffArray(np.array(x.values))


class GradientTape:
    """Ordered record of executed primitives.

    Each entry is ``(output node, input nodes, backward fn)``. Usage::

        with GradientTape() as tape:
            loss = model(x)
        grads = tape.backward(loss)
    """

    def __init__(self):
        self.entries: list[tuple[int, tuple[int | None, ...], Callable]] = []

    def __enter__(self) -> "GradientTape":
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def backward(self, loss: DiffArray) -> dict[int, np.ndarray]:
        """Gradients of a scalar ``loss`` with respect to every reached leaf.

        Intermediate gradients are released once propagated; the returned map
        holds leaf node ids only.
        """
        if loss.values.size != 1 or loss.ndim > 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.node is None:
            return {}
        grads: dict[int, np.ndarray] = {loss.node: np.ones(loss.shape)}
        for out_node, in_nodes, fn in reversed(self.entries):
            g = grads.pop(out_node, None)
            if g is None:
                continue
            needs = tuple(n is not None for n in in_nodes)
            in_grads = fn(g, needs)
            for node, need, gi in zip(in_nodes, needs, in_grads):
                if not need or gi is None:
                    continue
                if node in grads:
                    grads[node] = grads[node] + gi
                else:
                    grads[node] = gi
        return grads

    def gradient(self, loss: DiffArray, arrays: Sequence[DiffArray]) -> list[np.ndarray]:
        """Gradients for ``arrays`` in order; unreached arrays get zeros."""
        grads = self.backward(loss)
        return [grads.get(a.node, np.zeros(a.shape)) if a.node is not None else np.zeros(a.shape) for a in arrays]


def _active_tape() -> GradientTape | None:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def is_recording() -> bool:
    return _active_tape() is not None


def _result(values: np.ndarray, inputs: Sequence[DiffArray], backward: Callable) -> DiffArray:
    out = DiffArray(values)
    tape = _active_tape()
    if tape is not None and any(x.node is not None for x in inputs):
        out.node = next(_node_ids)
        tape.entries.append((out.node, tuple(x.node for x in inputs), backward))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_axis(axis: int, ndim: int, op: str) -> int:
    if not -ndim <= axis < ndim:
        raise ValueError(f"{op}: axis {axis} out of range for {ndim}-d array")
    return axis % ndim


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> DiffArray:
    a, b = constant(a), constant(b)

    def backward(g, needs):
        return (
            _unbroadcast(g, a.shape) if needs[0] else None,
            _unbroadcast(g, b.shape) if needs[1] else None,
        )

    return _result(a.values + b.values, (a, b), backward)


def sub(a, b) -> DiffArray:
    a, b = constant(a), constant(b)

    def backward(g, needs):
        return (
            _unbroadcast(g, a.shape) if needs[0] else None,
            _unbroadcast(-g, b.shape) if needs[1] else None,
        )

    return _result(a.values - b.values, (a, b), backward)


def mul(a, b) -> DiffArray:
    a, b = constant(a), constant(b)

    def backward(g, needs):
        return (
            _unbroadcast(g * b.values, a.shape) if needs[0] else None,
            _unbroadcast(g * a.values, b.shape) if needs[1] else None,
        )

    return _result(a.values * b.values, (a, b), backward)


def div(a, b) -> DiffArray:
    a, b = constant(a), constant(b)
    q = a.values / b.values

    def backward(g, needs):
        return (
            _unbroadcast(g / b.values, a.shape) if needs[0] else None,
            _unbroadcast(-g * q / b.values, b.shape) if needs[1] else None,
        )

    return _result(q, (a, b), backward)


def scale(x: DiffArray, factor: float) -> DiffArray:
    factor = float(factor)
    return _result(x.values * factor, (x,), lambda g, needs: (g * factor,))


def square(x: DiffArray) -> DiffArray:
    return _result(x.values * x.values, (x,), lambda g, needs: (2.0 * g * x.values,))


def sigmoid(x: DiffArray) -> DiffArray:
    y = expit(x.values)
    return _result(y, (x,), lambda g, needs: (g * y * (1.0 - y),))


def relu(x: DiffArray) -> DiffArray:
    mask = x.values > 0
    return _result(np.where(mask, x.values, 0.0), (x,), lambda g, needs: (g * mask,))


# ---------------------------------------------------------------------------
# reductions and shape


def sum(x: DiffArray, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> DiffArray:  # noqa: A001
    if isinstance(axis, int):
        axis = _check_axis(axis, x.ndim, "sum")
    out = x.values.sum(axis=axis, keepdims=keepdims)

    def backward(g, needs):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(out, (x,), backward)


def mean(x: DiffArray, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> DiffArray:
    if isinstance(axis, int):
        axis = _check_axis(axis, x.ndim, "mean")
    count = x.values.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def softmax(x: DiffArray, axis: int = -1) -> DiffArray:
    axis = _check_axis(axis, x.ndim, "softmax")
    shifted = x.values - x.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g, needs):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (x,), backward)


def global_avg_pool(x: DiffArray) -> DiffArray:
    """Mean over the two trailing (spatial) axes: ``[..., C, H, W] -> [..., C]``."""
    if x.ndim < 3:
        raise ValueError(f"global_avg_pool expects [..., C, H, W], got shape {x.shape}")
    return mean(x, axis=(-2, -1))


def reshape(x: DiffArray, shape: Sequence[int]) -> DiffArray:
    old = x.shape
    return _result(x.values.reshape(shape), (x,), lambda g, needs: (g.reshape(old),))


def take(x: DiffArray, index: int, axis: int) -> DiffArray:
    """``x`` indexed at ``index`` along ``axis`` (the axis is dropped)."""
    axis = _check_axis(axis, x.ndim, "take")
    shape = x.shape

    def backward(g, needs):
        full = np.zeros(shape)
        np.moveaxis(full, axis, 0)[index] = g
        return (full,)

    return _result(np.take(x.values, index, axis=axis), (x,), backward)


def matmul(a, b) -> DiffArray:
    a, b = constant(a), constant(b)

    def backward(g, needs):
        ga = gb = None
        if needs[0]:
            ga = _unbroadcast(g @ np.swapaxes(b.values, -1, -2), a.shape)
        if needs[1]:
            gb = _unbroadcast(np.swapaxes(a.values, -1, -2) @ g, b.shape)
        return ga, gb

    return _result(a.values @ b.values, (a, b), backward)


def concat_channels(arrays: Sequence[DiffArray]) -> DiffArray:
    """Stack along the channel axis of ``[C, H, W]`` or ``[B, C, H, W]`` arrays."""
    arrays = [constant(a) for a in arrays]
    if len(arrays) < 2:
        raise ValueError("concat_channels needs at least two arrays")
    ref = arrays[0]
    if ref.ndim not in (3, 4):
        raise ValueError(f"concat_channels expects 3-d or 4-d arrays, got shape {ref.shape}")
    for i, a in enumerate(arrays[1:], start=1):
        if a.ndim != ref.ndim:
            raise ValueError(f"concat_channels: array {i} has {a.ndim} dims, array 0 has {ref.ndim}")
        if a.shape[-2] != ref.shape[-2]:
            raise ValueError(f"concat_channels: array {i} height {a.shape[-2]} != {ref.shape[-2]}")
        if a.shape[-1] != ref.shape[-1]:
            raise ValueError(f"concat_channels: array {i} width {a.shape[-1]} != {ref.shape[-1]}")
        if ref.ndim == 4 and a.shape[0] != ref.shape[0]:
            raise ValueError(f"concat_channels: array {i} batch {a.shape[0]} != {ref.shape[0]}")
    sizes = [a.shape[-3] for a in arrays]
    bounds = np.cumsum([0] + sizes)

    def backward(g, needs):
        return tuple(g[..., lo:hi, :, :] if need else None for need, lo, hi in zip(needs, bounds[:-1], bounds[1:]))

    return _result(np.concatenate([a.values for a in arrays], axis=-3), arrays, backward)


def _bilinear_matrix(n: int, factor: int) -> np.ndarray:
    """``[n*factor, n]`` interpolation matrix, half-pixel centres, clamped edges."""
    m = np.zeros((n * factor, n))
    for i in range(n * factor):
        src = min(max((i + 0.5) / factor - 0.5, 0.0), n - 1.0)
        lo = int(np.floor(src))
        hi = min(lo + 1, n - 1)
        t = src - lo
        m[i, lo] += 1.0 - t
        m[i, hi] += t
    return m


def upsample_bilinear_numpy(x: np.ndarray, factor: int) -> np.ndarray:
    """Non-differentiable twin of :func:`upsample_bilinear` for plain arrays."""
    if factor == 1:
        return np.array(x, dtype=np.float64)
    uh = _bilinear_matrix(x.shape[-2], factor)
    uw = _bilinear_matrix(x.shape[-1], factor)
    return uh @ x @ uw.T


def upsample_bilinear(x: DiffArray, factor: int) -> DiffArray:
    if factor not in (1, 2):
        raise ValueError(f"upsample factor must be 1 or 2, got {factor}")
    if factor == 1:
        return _result(np.array(x.values), (x,), lambda g, needs: (g,))
    uh = _bilinear_matrix(x.shape[-2], factor)
    uw = _bilinear_matrix(x.shape[-1], factor)
    return _result(uh @ x.values @ uw.T, (x,), lambda g, needs: (uh.T @ g @ uw,))


# ---------------------------------------------------------------------------
# convolution


def _conv_shifted(x: np.ndarray, w: np.ndarray, padding: int, out: np.ndarray) -> None:
    """Stride-1 inference without im2col: one GEMM over all kernel offsets, then shifted adds.

    On a row-major padded image the offset (di, dj) is a flat shift of
    ``di * wp + dj``, so every tap reads a contiguous slice. Columns past
    ``wo`` in each row are wrap-around garbage and get dropped. Zero padding
    is applied chunk by chunk while filling the GEMM operand, and the result
    is written into ``out`` (``[O, ho, wo]``).

    The GEMM and tap sums run in float32 unless ``DDRF_FLOAT64_INFERENCE``
    is set.
    """
    c, h, wd = x.shape
    o, _, k, _ = w.shape
    wp = wd + 2 * padding
    ho, wo = out.shape[1:]
    dtype = np.float64 if _INFERENCE_FLOAT64 else np.float32
    taps = np.ascontiguousarray(w.transpose(2, 3, 0, 1)).reshape(k * k * o, c).astype(dtype)
    rows = max(1, _INFERENCE_COLS_BUDGET // (k * k * o * wp))
    for r0 in range(0, ho, rows):
        r1 = min(ho, r0 + rows)
        span = (r1 - r0) * wp
        n_in = r1 - r0 + k - 1
        piece = np.zeros((c, n_in * wp + k - 1), dtype)
        grid = piece[:, :n_in * wp].reshape(c, n_in, wp)
        # padded rows r0 .. r0 + n_in map to input rows shifted by -padding
        lo, hi = max(0, r0 - padding), min(h, r0 + n_in - padding)
        grid[:, lo - r0 + padding:hi - r0 + padding, padding:padding + wd] = x[:, lo:hi]
        y = np.matmul(taps, piece)
        acc = y[:o, :span].copy()
        for d in range(1, k * k):
            off = (d // k) * wp + d % k
            acc += y[d * o:(d + 1) * o, off:off + span]
        out[:, r0:r1, :] = acc.reshape(o, r1 - r0, wp)[:, :, :wo]


def conv2d(x, weights, bias=None, stride: int = 1, padding: int = 0) -> DiffArray:
    """2-D cross-correlation.

    Args:
        x: ``[C_in, H, W]`` or ``[B, C_in, H, W]``.
        weights: ``[C_out, C_in, k, k]`` shared across the batch, or
            ``[B, C_out, C_in, k, k]`` per sample (dynamic convolution).
        bias: ``[C_out]``, ``[B, C_out]`` or None.
        stride: positive step.
        padding: zero padding on each side.

    Returns:
        ``[C_out, H', W']`` (or batched) with ``H' = (H + 2p - k) // stride + 1``.
    """
    x, w = constant(x), constant(weights)
    b = constant(bias) if bias is not None else None
    single = x.ndim == 3
    if x.ndim not in (3, 4):
        raise ValueError(f"conv2d: input must be [C,H,W] or [B,C,H,W], got shape {x.shape}")
    xv = x.values[None] if single else x.values
    batch, c_in, h, wd = xv.shape
    per_sample = w.ndim == 5
    if w.ndim not in (4, 5):
        raise ValueError(f"conv2d: weights must be [C_out,C_in,k,k] or [B,C_out,C_in,k,k], got {w.shape}")
    wshape = w.shape[1:] if per_sample else w.shape
    c_out, wc_in, k, k2 = wshape
    if per_sample and w.shape[0] != batch:
        raise ValueError(f"conv2d: weights batch axis {w.shape[0]} != input batch axis {batch}")
    if wc_in != c_in:
        raise ValueError(f"conv2d: input channel axis (C_in={c_in}) != weights axis 1 (C_in={wc_in})")
    if k != k2:
        raise ValueError(f"conv2d: kernel height {k} != kernel width {k2}")
    if k % 2 == 0:
        raise ValueError(f"conv2d: kernel size must be odd, got {k}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: need stride >= 1 and padding >= 0, got {stride}, {padding}")
    hp, wp = h + 2 * padding, wd + 2 * padding
    if hp < k:
        raise ValueError(f"conv2d: padded height {hp} smaller than kernel {k}")
    if wp < k:
        raise ValueError(f"conv2d: padded width {wp} smaller than kernel {k}")
    if b is not None:
        bshape = (batch, c_out) if b.ndim == 2 else (c_out,)
        if b.shape != bshape:
            raise ValueError(f"conv2d: bias shape {b.shape} does not match output channel axis (C_out={c_out})")
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1

    ckk = c_in * k * k
    # [B or 1, O, Ckk]; broadcast view keeps one matmul path for shared and per-sample weights
    wmat = w.values.reshape(batch, c_out, ckk) if per_sample else w.values.reshape(1, c_out, ckk)
    wb = np.broadcast_to(wmat, (batch, c_out, ckk))

    recording = is_recording() and any(a.node is not None for a in (x, w, b) if a is not None)
    shifted = not recording and batch * ho * wo * ckk > _INFERENCE_COLS_BUDGET and stride == 1
    xp = xv if shifted or not padding else np.pad(xv, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    if not shifted and (recording or batch * ho * wo * ckk <= _INFERENCE_COLS_BUDGET):
        cols = _accel.im2col(xp, k, stride, ho, wo)  # [B, Ckk, HW]
        out = np.matmul(wb, cols)
    elif shifted:
        cols = None
        out = np.empty((batch, c_out, ho * wo))
        for n in range(batch):
            _conv_shifted(xv[n], w.values[n] if per_sample else w.values, padding, out[n].reshape(c_out, ho, wo))
    else:
        cols = None
        out = np.empty((batch, c_out, ho * wo))
        rows = max(1, _INFERENCE_COLS_BUDGET // max(1, wo * ckk))
        for n in range(batch):
            for r0 in range(0, ho, rows):
                r1 = min(ho, r0 + rows)
                piece = xp[n:n + 1, :, r0 * stride:(r1 - 1) * stride + k, :]
                c = _accel.im2col(piece, k, stride, r1 - r0, wo)
                out[n, :, r0 * wo:r1 * wo] = np.matmul(wb[n:n + 1], c)[0]
    out = out.reshape(batch, c_out, ho, wo)
    if b is not None:
        out += b.values[:, :, None, None] if b.ndim == 2 else b.values[None, :, None, None]
    if single:
        out = out[0]

    def backward(g, needs):
        g4 = g[None] if single else g
        g2 = g4.reshape(batch, c_out, ho * wo)
        gx = gw = gb = None
        if needs[0]:
            dcols = np.matmul(np.swapaxes(wb, 1, 2), g2)  # [B, Ckk, HW]
            dxp = _accel.col2im(dcols, c_in, hp, wp, k, stride, ho, wo)
            gx = dxp[:, :, padding:padding + h, padding:padding + wd] if padding else dxp
            if single:
                gx = gx[0]
        if needs[1]:
            if per_sample:
                gw = np.matmul(g2, np.swapaxes(cols, 1, 2)).reshape(w.shape)
            else:
                gw = np.matmul(g2, np.swapaxes(cols, 1, 2)).sum(axis=0).reshape(w.shape)
        if len(needs) > 2 and needs[2]:
            gb = g4.sum(axis=(2, 3)) if b.ndim == 2 else g4.sum(axis=(0, 2, 3))
        return gx, gw, gb

    inputs = (x, w) if b is None else (x, w, b)
    return _result(out, inputs, backward)


# ---------------------------------------------------------------------------
# optimisers


def _scales(lr_scales, count: int) -> list[float]:
    if lr_scales is None:
        return [1.0] * count
    scales = [float(v) for v in lr_scales]
    if len(scales) != count:
        raise ValueError(f"optimizer: {len(scales)} learning-rate scales for {count} parameters")
    return scales


class SGD:
    """Plain SGD with optional heavy-ball momentum."""

    def __init__(self, params: Iterable[DiffArray], lr: float = 1e-3, momentum: float = 0.0,
                 lr_scales: Sequence[float] | None = None):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.lr_scales = _scales(lr_scales, len(self.params))
        self._velocity = [np.zeros(p.shape) for p in self.params]

    def step(self, grads: dict[int, np.ndarray]) -> None:
        for i, p in enumerate(self.params):
            g = grads.get(p.node)
            if g is None:
                continue
            if self.momentum:
                self._velocity[i] = self.momentum * self._velocity[i] + g
                g = self._velocity[i]
            # new array rather than in-place: values stay immutable once created
            p.values = p.values - self.lr * self.lr_scales[i] * g


class Adam:
    """Adam (Kingma & Ba) with bias correction."""

    def __init__(self, params: Iterable[DiffArray], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 lr_scales: Sequence[float] | None = None):
        self.params = list(params)
        self.lr = lr
        self.lr_scales = _scales(lr_scales, len(self.params))
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self._m = [np.zeros(p.shape) for p in self.params]
        self._v = [np.zeros(p.shape) for p in self.params]

    def step(self, grads: dict[int, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for i, p in enumerate(self.params):
            g = grads.get(p.node)
            if g is None:
                continue
            self._m[i] = self.b1 * self._m[i] + (1.0 - self.b1) * g
            self._v[i] = self.b2 * self._v[i] + (1.0 - self.b2) * g * g
            p.values = p.values - self.lr * self.lr_scales[i] * (self._m[i] / c1) / (np.sqrt(self._v[i] / c2) + self.eps)
