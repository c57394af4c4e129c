"""Evaluation metrics: EN, AG, SSIM, VIF, PSNR.

Inputs are [0, 1] images; AG, SSIM, VIF and PSNR work on the 0-255 scale so
magnitudes are comparable with published fusion tables. Nothing here is
differentiable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._accel import correlate_valid
from .losses import gaussian_window

PSNR_CAP = 100.0
VIF_LEVELS = 4
VIF_WINDOW = 9
VIF_NOISE_VAR = 2.0
_EPS = 1e-10


def _check_pair(a, b, name: str) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"{name}: shape mismatch {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ValueError(f"{name}: expected 2-d images, got shape {a.shape}")
    return a, b


def entropy(image) -> float:
    """Shannon entropy (bits) of the 256-level histogram."""
    q = np.rint(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.int64)
    p = np.bincount(q.ravel(), minlength=256) / q.size
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p)))


def average_gradient(image) -> float:
    """Mean of ``sqrt((dx^2 + dy^2) / 2)`` with forward differences.

    Differences past the last row/column are zero.
    """
    x = np.asarray(image, dtype=np.float64) * 255.0
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ValueError(f"average_gradient needs a 2-d image of at least 2x2, got shape {x.shape}")
    dx = np.zeros_like(x)
    dy = np.zeros_like(x)
    dx[:, :-1] = x[:, 1:] - x[:, :-1]
    dy[:-1, :] = x[1:, :] - x[:-1, :]
    return float(np.mean(np.sqrt((dx**2 + dy**2) / 2.0)))


def _filter(x: np.ndarray, window: np.ndarray) -> np.ndarray:
    return correlate_valid(x, window)


def ssim(a, b) -> float:
    """Mean SSIM, 11x11 Gaussian window (sigma 1.5), valid region."""
    a, b = _check_pair(a, b, "ssim")
    if min(a.shape) < 11:
        raise ValueError(f"ssim needs images at least 11x11, got {a.shape}")
    x, y = a * 255.0, b * 255.0
    c1, c2 = (0.01 * 255.0) ** 2, (0.03 * 255.0) ** 2
    win = gaussian_window()
    mu_x, mu_y = _filter(x, win), _filter(y, win)
    var_x = _filter(x * x, win) - mu_x * mu_x
    var_y = _filter(y * y, win) - mu_y * mu_y
    cov = _filter(x * y, win) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def psnr(a, b) -> float:
    a, b = _check_pair(a, b, "psnr")
    mse = float(np.mean((a * 255.0 - b * 255.0) ** 2))
    if mse < 1e-12:
        return PSNR_CAP
    return float(10.0 * np.log10(255.0**2 / mse))


def _pyramid_down(x: np.ndarray) -> np.ndarray:
    k = gaussian_window(5, 1.0)
    xp = np.pad(x, 2, mode="reflect")
    return correlate_valid(xp, k)[::2, ::2]


def vif_levels(reference, fused) -> tuple[float, int]:
    """Pixel-domain multi-scale VIF and the number of levels it used.

    Up to four Gaussian-pyramid levels; a level is used only when it is at
    least as large as the 9x9 statistics window.
    """
    ref, dist = _check_pair(reference, fused, "vif")
    ref, dist = ref * 255.0, dist * 255.0
    win = gaussian_window(VIF_WINDOW, VIF_WINDOW / 5.0)
    num = den = 0.0
    used = 0
    for level in range(VIF_LEVELS):
        if level > 0:
            ref, dist = _pyramid_down(ref), _pyramid_down(dist)
        if min(ref.shape) < VIF_WINDOW:
            break
        used += 1
        mu1, mu2 = _filter(ref, win), _filter(dist, win)
        s1 = np.maximum(_filter(ref * ref, win) - mu1 * mu1, 0.0)
        s2 = np.maximum(_filter(dist * dist, win) - mu2 * mu2, 0.0)
        s12 = _filter(ref * dist, win) - mu1 * mu2
        g = s12 / (s1 + _EPS)
        sv = s2 - g * s12
        flat_ref = s1 < _EPS
        g[flat_ref] = 0.0
        sv[flat_ref] = s2[flat_ref]
        s1 = np.where(flat_ref, 0.0, s1)
        flat_dist = s2 < _EPS
        g[flat_dist] = 0.0
        sv[flat_dist] = 0.0
        neg = g < 0
        sv[neg] = s2[neg]
        g[neg] = 0.0
        sv = np.maximum(sv, _EPS)
        num += float(np.sum(np.log10(1.0 + g * g * s1 / (sv + VIF_NOISE_VAR))))
        den += float(np.sum(np.log10(1.0 + s1 / VIF_NOISE_VAR)))
    if used == 0:
        raise ValueError(f"vif: image {ref.shape} smaller than the {VIF_WINDOW}x{VIF_WINDOW} window")
    if den <= 0.0:
        # flat reference carries no information; identical flat images are a perfect match
        return (1.0 if np.array_equal(reference, fused) else 0.0), used
    return num / den, used


def vif(reference, fused) -> float:
    return vif_levels(reference, fused)[0]


@dataclass(frozen=True)
class MetricReport:
    en: float
    ag: float
    ssim: float
    vif: float
    psnr: float
    mean: float
    vif_levels: int = VIF_LEVELS

    @property
    def vif_reduced(self) -> bool:
        """True when the image was too small for all pyramid levels."""
        return self.vif_levels < VIF_LEVELS

    def values(self) -> tuple[float, float, float, float, float, float]:
        return (self.en, self.ag, self.ssim, self.vif, self.psnr, self.mean)


def make_report(en: float, ag: float, ssim_v: float, vif_v: float, psnr_v: float, levels: int = VIF_LEVELS) -> MetricReport:
    return MetricReport(en, ag, ssim_v, vif_v, psnr_v, (en + ag + ssim_v + vif_v + psnr_v) / 5.0, levels)


def evaluate_pair(x_v, x_i, fused) -> MetricReport:
    """EN and AG of the fused image; SSIM, VIF and PSNR averaged over both sources."""
    x_v, fused = _check_pair(x_v, fused, "evaluate_pair")
    x_i, _ = _check_pair(x_i, fused, "evaluate_pair")
    vif_v, lv = vif_levels(x_v, fused)
    vif_i, li = vif_levels(x_i, fused)
    return make_report(
        entropy(fused),
        average_gradient(fused),
        (ssim(fused, x_v) + ssim(fused, x_i)) / 2.0,
        (vif_v + vif_i) / 2.0,
        (psnr(fused, x_v) + psnr(fused, x_i)) / 2.0,
        min(lv, li),
    )
