"""Hot inner loops, compiled with numba when available.

Every kernel has a pure-numpy twin with the same accumulation order, so the
two backends agree to the last bit on the copy kernels and to rounding on
the accumulating ones. Set ``DDRF_DISABLE_NUMBA=1`` to force the numpy path.

``im2col`` always dispatches to numpy: its strided block copies beat the
compiled loop. The numba version is kept for the benchmark.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("DDRF_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("numba disabled by DDRF_DISABLE_NUMBA")
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False


# ---------------------------------------------------------------------------
# numpy reference path


def im2col_numpy(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Unfold a padded ``[B, C, Hp, Wp]`` batch into ``[B, C*k*k, ho*wo]``."""
    b, c = xp.shape[:2]
    cols = np.empty((b, c, k, k, ho, wo))
    for di in range(k):
        for dj in range(k):
            cols[:, :, di, dj] = xp[:, :, di:di + stride * (ho - 1) + 1:stride, dj:dj + stride * (wo - 1) + 1:stride]
    return cols.reshape(b, c * k * k, ho * wo)


def col2im_numpy(cols: np.ndarray, c: int, hp: int, wp: int, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Adjoint of :func:`im2col_numpy`: scatter-add columns back to ``[B, C, Hp, Wp]``."""
    b = cols.shape[0]
    blocks = cols.reshape(b, c, k, k, ho, wo)
    out = np.zeros((b, c, hp, wp))
    for di in range(k):
        for dj in range(k):
            out[:, :, di:di + stride * (ho - 1) + 1:stride, dj:dj + stride * (wo - 1) + 1:stride] += blocks[:, :, di, dj]
    return out


def correlate_valid_numpy(xp: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Valid 2-D cross-correlation of ``xp`` (2-D) with ``kernel`` (2-D)."""
    kh, kw = kernel.shape
    h = xp.shape[0] - kh + 1
    w = xp.shape[1] - kw + 1
    out = np.zeros((h, w))
    for di in range(kh):
        for dj in range(kw):
            out += kernel[di, dj] * xp[di:di + h, dj:dj + w]
    return out


# ---------------------------------------------------------------------------
# numba path

if HAS_NUMBA:

    @njit(cache=True)
    def _im2col_nb(xp, k, stride, ho, wo):
        b, c = xp.shape[0], xp.shape[1]
        out = np.empty((b, c * k * k, ho * wo))
        for n in range(b):
            for ch in range(c):
                for di in range(k):
                    for dj in range(k):
                        row = (ch * k + di) * k + dj
                        for i in range(ho):
                            base = i * wo
                            src = i * stride + di
                            for j in range(wo):
                                out[n, row, base + j] = xp[n, ch, src, j * stride + dj]
        return out

    @njit(cache=True)
    def _col2im_nb(cols, c, hp, wp, k, stride, ho, wo):
        b = cols.shape[0]
        out = np.zeros((b, c, hp, wp))
        # offset loops outside the pixel loops: each pixel sums in numpy's order
        for n in range(b):
            for ch in range(c):
                for di in range(k):
                    for dj in range(k):
                        row = (ch * k + di) * k + dj
                        for i in range(ho):
                            base = i * wo
                            dst = i * stride + di
                            for j in range(wo):
                                out[n, ch, dst, j * stride + dj] += cols[n, row, base + j]
        return out

    @njit(cache=True)
    def _correlate_valid_nb(xp, kernel):
        kh, kw = kernel.shape
        h = xp.shape[0] - kh + 1
        w = xp.shape[1] - kw + 1
        out = np.zeros((h, w))
        for di in range(kh):
            for dj in range(kw):
                kv = kernel[di, dj]
                for i in range(h):
                    for j in range(w):
                        out[i, j] += kv * xp[i + di, j + dj]
        return out

    def im2col_numba(xp, k, stride, ho, wo):
        return _im2col_nb(np.ascontiguousarray(xp, dtype=np.float64), k, stride, ho, wo)

    def col2im_numba(cols, c, hp, wp, k, stride, ho, wo):
        return _col2im_nb(np.ascontiguousarray(cols, dtype=np.float64), c, hp, wp, k, stride, ho, wo)

    def correlate_valid_numba(xp, kernel):
        return _correlate_valid_nb(
            np.ascontiguousarray(xp, dtype=np.float64), np.ascontiguousarray(kernel, dtype=np.float64)
        )

    BACKEND = "numba"
    # numpy's block copies already run at memory speed; the numba unfold is slower
    im2col = im2col_numpy
    col2im = col2im_numba
    correlate_valid = correlate_valid_numba
else:
    BACKEND = "numpy"
    im2col = im2col_numpy
    col2im = col2im_numpy
    correlate_valid = correlate_valid_numpy


def correlate_replicate(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Same-size cross-correlation with edge-replicate padding (odd kernels)."""
    kh, kw = kernel.shape
    xp = np.pad(image, ((kh // 2, kh // 2), (kw // 2, kw // 2)), mode="edge")
    return correlate_valid(xp, kernel)
