"""Static and dynamic convolution layers.

A dynamic layer owns ``N`` candidate kernels. A small perceptron on the
globally pooled input produces softmax weights ``pi``; the layer then runs a
single convolution with ``(1/N) * sum_k pi_k W_k`` and the matching bias mix.
The ``1/N`` factor is optional (``eq6_literal``).
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import DiffArray


def static_forward(weights: DiffArray, bias: DiffArray | None, x: DiffArray) -> DiffArray:
    """Plain same-padded, stride-1 convolution."""
    k = weights.shape[-1]
    return ad.conv2d(x, weights, bias, stride=1, padding=(k - 1) // 2)


class StaticConv:
    kind = "static"

    def __init__(self, c_in: int, c_out: int, k: int = 3, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        std = math.sqrt(2.0 / (c_in * k * k))
        self.c_in, self.c_out, self.k = c_in, c_out, k
        self.weight = ad.parameter(rng.normal(0.0, std, size=(c_out, c_in, k, k)))
        self.bias = ad.parameter(np.zeros(c_out))

    def parameters(self) -> list[tuple[str, DiffArray]]:
        return [("weight", self.weight), ("bias", self.bias)]

    def lr_scales(self) -> list[float]:
        return [1.0, 1.0]

    def __call__(self, x: DiffArray) -> DiffArray:
        if x.shape[-3] != self.c_in:
            raise ValueError(f"static conv expects {self.c_in} input channels, got {x.shape[-3]}")
        return static_forward(self.weight, self.bias, x)


class DynamicConv:
    """Attention-mixed candidate kernels.

    Candidates are He-initialised and then scaled so that the uniform-``pi``
    mixture (including the optional ``1/N``) has He variance. The output
    layer of the attention perceptron starts near zero, so ``pi`` starts near
    uniform.
    """

    kind = "dynamic"

    def __init__(
        self,
        c_in: int,
        c_out: int,
        k: int = 3,
        candidates: int = 4,
        rng: np.random.Generator | None = None,
        eq6_literal: bool = True,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        n = candidates
        if n < 1:
            raise ValueError(f"candidate count must be positive, got {n}")
        self.c_in, self.c_out, self.k, self.n = c_in, c_out, k, n
        self.eq6_literal = eq6_literal
        hidden = max(1, math.ceil(c_in / 4))
        he = math.sqrt(2.0 / (c_in * k * k))
        boost = math.sqrt(n) * (n if eq6_literal else 1)
        self.weights = ad.parameter(rng.normal(0.0, he * boost, size=(n, c_out, c_in, k, k)))
        self.biases = ad.parameter(np.zeros((n, c_out)))
        self.att_w1 = ad.parameter(rng.normal(0.0, math.sqrt(1.0 / c_in), size=(c_in, hidden)))
        self.att_b1 = ad.parameter(np.zeros(hidden))
        self.att_w2 = ad.parameter(rng.normal(0.0, 1e-2, size=(hidden, n)))
        self.att_b2 = ad.parameter(np.zeros(n))

    def parameters(self) -> list[tuple[str, DiffArray]]:
        return [
            ("weights", self.weights),
            ("biases", self.biases),
            ("att_w1", self.att_w1),
            ("att_b1", self.att_b1),
            ("att_w2", self.att_w2),
            ("att_b2", self.att_b2),
        ]

    def lr_scales(self) -> list[float]:
        """Step multipliers aligned with :meth:`parameters`.

        With the literal ``1/N`` each candidate reaches the mixed kernel scaled
        by ``pi_n / N``, so an optimiser with per-parameter normalised steps
        (Adam) would move the mixture N times slower than a static kernel.
        Candidate steps are scaled by N to undo that.
        """
        boost = float(self.n) if self.eq6_literal and self.n != 1 else 1.0
        return [boost, boost, 1.0, 1.0, 1.0, 1.0]

    def attention(self, x: DiffArray) -> DiffArray:
        """Mixing weights ``pi``: ``[B, N]`` for batched input, ``[N]`` otherwise."""
        pooled = ad.global_avg_pool(x)
        hidden = ad.sigmoid(ad.matmul(pooled, self.att_w1) + self.att_b1)
        return ad.softmax(ad.matmul(hidden, self.att_w2) + self.att_b2, axis=-1)

    def __call__(self, x: DiffArray) -> DiffArray:
        return dynamic_forward(self, x)


def dynamic_forward(layer: DynamicConv, x: DiffArray) -> DiffArray:
    """Convolve ``x`` with its own attention-weighted kernel mixture."""
    x = ad.constant(x)
    if x.ndim not in (3, 4):
        raise ValueError(f"dynamic conv expects [C,H,W] or [B,C,H,W], got shape {x.shape}")
    if x.shape[-3] != layer.c_in:
        raise ValueError(f"dynamic conv expects {layer.c_in} input channels, got {x.shape[-3]}")
    single = x.ndim == 3
    xb = ad.reshape(x, (1,) + x.shape) if single else x
    batch = xb.shape[0]
    pi = layer.attention(xb)  # [B, N]
    n, o, i, k = layer.n, layer.c_out, layer.c_in, layer.k
    w = ad.matmul(pi, ad.reshape(layer.weights, (n, o * i * k * k)))
    b = ad.matmul(pi, layer.biases)
    if layer.eq6_literal and n != 1:
        w = ad.scale(w, 1.0 / n)
        b = ad.scale(b, 1.0 / n)
    w = ad.reshape(w, (batch, o, i, k, k))
    out = ad.conv2d(xb, w, b, stride=1, padding=(k - 1) // 2)
    return ad.reshape(out, out.shape[1:]) if single else out
