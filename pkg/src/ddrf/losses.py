"""Training objective: similarity, negative-sample and positive-sample terms.

All three terms are built on a differentiable SSIM (11x11 Gaussian window,
sigma 1.5, valid region, C1 = 0.01^2, C2 = 0.03^2 on the [0, 1] scale).

The negative term defaults to ``mean SSIM(negative, fused)``: minimising it
pushes the fused image away from degraded renditions. ``literal=True``
gives the complementary ``1 - mean SSIM`` form.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DiffArray

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5


def gaussian_window(size: int = WINDOW_SIZE, sigma: float = WINDOW_SIGMA) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


_WINDOW = DiffArray(gaussian_window()[None, None])


def _to_batch(x) -> DiffArray:
    x = ad.constant(x)
    if x.ndim == 2:
        return ad.reshape(x, (1, 1) + x.shape)
    if x.ndim == 3:
        return ad.reshape(x, (x.shape[0], 1) + x.shape[1:])
    if x.ndim == 4 and x.shape[1] == 1:
        return x
    raise ValueError(f"SSIM expects [H,W], [B,H,W] or [B,1,H,W], got shape {x.shape}")


def ssim_batch(a, b) -> DiffArray:
    """Per-sample mean SSIM, ``[B]``; differentiable in both arguments."""
    x, y = _to_batch(a), _to_batch(b)
    if x.shape != y.shape:
        raise ValueError(f"SSIM shape mismatch: {x.shape} vs {y.shape}")
    batch, _, h, w = x.shape
    if h < WINDOW_SIZE or w < WINDOW_SIZE:
        raise ValueError(f"SSIM needs images at least {WINDOW_SIZE}x{WINDOW_SIZE}, got {h}x{w}")
    # filter all five statistics in one convolution call
    stack = ad.concat_channels([x, y, ad.square(x), ad.square(y), x * y])
    filt = ad.conv2d(ad.reshape(stack, (batch * 5, 1, h, w)), _WINDOW)
    ho, wo = filt.shape[-2:]
    filt = ad.reshape(filt, (batch, 5, ho * wo))
    stats = [ad.take(filt, c, axis=1) for c in range(5)]
    mu_x, mu_y, exx, eyy, exy = stats
    mu_xx, mu_yy, mu_xy = ad.square(mu_x), ad.square(mu_y), mu_x * mu_y
    var_x, var_y, cov = exx - mu_xx, eyy - mu_yy, exy - mu_xy
    num = (2.0 * mu_xy + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_xx + mu_yy + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return ad.mean(num / den, axis=1)


def ssim_value(a, b) -> DiffArray:
    """Scalar SSIM averaged over the batch."""
    return ad.mean(ssim_batch(a, b))


def loss_similarity(pairs: Sequence[tuple]) -> DiffArray:
    """``1 - mean SSIM`` over (prediction, target) pairs.

    A target may be a tuple of references (the fused output against both
    clean sources); its SSIM is the average over those references.
    """
    if not pairs:
        raise ValueError("loss_similarity needs at least one pair")
    scores = []
    for pred, target in pairs:
        if isinstance(target, (tuple, list)):
            refs = [ssim_value(pred, t) for t in target]
            s = refs[0]
            for r in refs[1:]:
                s = s + r
            scores.append(ad.scale(s, 1.0 / len(refs)))
        else:
            scores.append(ssim_value(pred, target))
    total = scores[0]
    for s in scores[1:]:
        total = total + s
    return 1.0 - ad.scale(total, 1.0 / len(scores))


def loss_negative(fused, negatives: Sequence, literal: bool = False) -> DiffArray:
    """Mean SSIM between the fused image and degraded negatives."""
    if not negatives:
        raise ValueError("loss_negative needs at least one negative")
    total = None
    for neg in negatives:
        s = ssim_value(ad.constant(neg), fused)
        total = s if total is None else total + s
    value = ad.scale(total, 1.0 / len(negatives))
    return 1.0 - value if literal else value


def loss_positive(fused, reference) -> DiffArray:
    """``1 - SSIM(fused, reference)`` with a hand-crafted fusion as reference."""
    f, r = ad.constant(fused), ad.constant(reference)
    if f.shape != r.shape:
        raise ValueError(f"loss_positive shape mismatch: {f.shape} vs {r.shape}")
    return 1.0 - ssim_value(f, r)


def loss_pixel(pairs: Sequence[tuple]) -> DiffArray:
    """Mean absolute difference over (prediction, target) pairs.

    SSIM barely reacts to a uniform intensity offset, so this term keeps the
    restored outputs anchored in brightness.
    """
    if not pairs:
        raise ValueError("loss_pixel needs at least one pair")
    total = None
    for pred, target in pairs:
        d = ad.constant(pred) - ad.constant(target)
        term = ad.mean(ad.relu(d) + ad.relu(-d))
        total = term if total is None else total + term
    return ad.scale(total, 1.0 / len(pairs))


@dataclass(frozen=True)
class LossReport:
    similarity: float
    negative: float
    positive: float
    total: float
    w_sim: float = 1.0
    w_pos: float = 1.0
    w_neg: float = 1.0

    def recomputed_total(self) -> float:
        return self.w_neg * self.negative + self.w_sim * self.similarity + self.w_pos * self.positive


def loss_total(negatives: Sequence, similarity, positive, w_sim: float = 1.0, w_pos: float = 1.0,
               w_neg: float = 1.0) -> tuple[DiffArray, LossReport]:
    """``w_neg * mean(negatives) + w_sim * similarity + w_pos * positive``.

    With three negatives (one per degradation model) and unit weights this is
    ``(1/3) sum_i L(H_i) + L_sim + L_pos``.
    """
    parts = [ad.constant(n) for n in negatives]
    neg = None
    if parts:
        neg = parts[0]
        for p in parts[1:]:
            neg = neg + p
        neg = ad.scale(neg, 1.0 / len(parts))
    sim, pos = ad.constant(similarity), ad.constant(positive)
    total = ad.scale(sim, w_sim) + ad.scale(pos, w_pos)
    if neg is not None:
        total = ad.scale(neg, w_neg) + total
    neg_value = float(neg.values) if neg is not None else 0.0
    report = LossReport(float(sim.values), neg_value, float(pos.values), float(total.values), w_sim, w_pos, w_neg)
    return total, report
