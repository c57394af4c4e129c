"""Blur-kernel bank, convex dynamic kernels and the degradation operator.

The bank holds three families of four 15x15 kernels each: motion-blur line
segments, isotropic Gaussians and rotated anisotropic Gaussians. A dynamic
kernel is one kernel from each family mixed with simplex weights, which
keeps it nonnegative with unit mass. ``degrade`` blurs with replicate-edge
padding, subsamples, adds white Gaussian noise and clamps to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._accel import correlate_replicate

KERNEL_SIZE = 15
FAMILIES = ("motion", "isotropic", "anisotropic")
MAX_NOISE_SIGMA = 10.0 / 255.0

MOTION_PARAMS = ((5, 0.0), (5, 45.0), (9, 90.0), (9, 135.0))
ISOTROPIC_SIGMAS = (0.8, 1.6, 2.4, 3.2)
ANISOTROPIC_PARAMS = (((0.8, 2.4), 0.0), ((1.2, 3.2), 30.0), ((0.6, 1.8), 60.0), ((1.0, 4.0), 120.0))


def motion_kernel(length: int, angle_deg: float, size: int = KERNEL_SIZE) -> np.ndarray:
    """Normalised line segment of ``length`` pixels through the centre.

    Steps one pixel along the dominant axis, so diagonals keep all
    ``length`` pixels instead of merging after rounding.
    """
    k = np.zeros((size, size))
    c = size // 2
    theta = np.deg2rad(angle_deg)
    dx, dy = np.cos(theta), np.sin(theta)
    step = max(abs(dx), abs(dy))
    dx, dy = dx / step, dy / step
    for t in np.linspace(-(length - 1) / 2, (length - 1) / 2, length):
        col = int(np.rint(c + t * dx))
        row = int(np.rint(c - t * dy))
        k[row, col] = 1.0
    return k / k.sum()


def gaussian_kernel(cov: np.ndarray, size: int = KERNEL_SIZE) -> np.ndarray:
    c = size // 2
    yy, xx = np.mgrid[-c:c + 1, -c:c + 1].astype(np.float64)
    pts = np.stack([xx, yy], axis=-1)
    inv = np.linalg.inv(cov)
    k = np.exp(-0.5 * np.einsum("...i,ij,...j->...", pts, inv, pts))
    return k / k.sum()


def isotropic_gaussian(sigma: float, size: int = KERNEL_SIZE) -> np.ndarray:
    c = size // 2
    r = np.arange(-c, c + 1, dtype=np.float64)
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def anisotropic_gaussian(sigmas: tuple[float, float], angle_deg: float, size: int = KERNEL_SIZE) -> np.ndarray:
    theta = np.deg2rad(angle_deg)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    cov = rot @ np.diag([sigmas[0] ** 2, sigmas[1] ** 2]) @ rot.T
    return gaussian_kernel(cov, size)


@dataclass(frozen=True)
class KernelBank:
    """Twelve basis kernels, ordered motion(1..4), isotropic(1..4), anisotropic(1..4)."""

    kernels: np.ndarray
    seed: int = 0

    def __post_init__(self):
        k = np.asarray(self.kernels, dtype=np.float64)
        if k.ndim != 3 or k.shape[0] != 12 or k.shape[1] != k.shape[2]:
            raise ValueError(f"kernel bank must be [12, k, k], got {k.shape}")
        k.setflags(write=False)
        object.__setattr__(self, "kernels", k)

    @property
    def size(self) -> int:
        return self.kernels.shape[1]

    def basis(self, family: str, j: int) -> np.ndarray:
        if family not in FAMILIES:
            raise ValueError(f"unknown kernel family {family!r}; expected one of {FAMILIES}")
        if not 1 <= j <= 4:
            raise ValueError(f"basis index must be in 1..4, got {j}")
        return self.kernels[FAMILIES.index(family) * 4 + j - 1]

    def mean_kernel(self) -> np.ndarray:
        return self.kernels.mean(axis=0)


def build_kernel_bank(seed: int = 0, size: int = KERNEL_SIZE) -> KernelBank:
    """The fixed 12-kernel basis.

    All basis parameters are fixed, so ``seed`` is recorded for provenance
    but does not alter the kernels.
    """
    kernels = [motion_kernel(length, angle, size) for length, angle in MOTION_PARAMS]
    kernels += [isotropic_gaussian(s, size) for s in ISOTROPIC_SIGMAS]
    kernels += [anisotropic_gaussian(s, a, size) for s, a in ANISOTROPIC_PARAMS]
    return KernelBank(np.stack(kernels), seed=int(seed))


@dataclass(frozen=True)
class DynamicKernel:
    """``a * motion[j_m] + b * isotropic[j_i] + c * anisotropic[j_a]``."""

    a: float
    b: float
    c: float
    j_m: int
    j_i: int
    j_a: int
    kernel: np.ndarray = field(repr=False, compare=False)

    @property
    def weights(self) -> tuple[float, float, float]:
        return (self.a, self.b, self.c)

    @property
    def indices(self) -> tuple[int, int, int]:
        return (self.j_m, self.j_i, self.j_a)


def synthesize_dynamic_kernel(bank: KernelBank, a: float, b: float, c: float, j_m: int, j_i: int, j_a: int) -> DynamicKernel:
    """Realise a convex combination of one kernel from each family."""
    a, b, c = float(a), float(b), float(c)
    for name, v in (("a", a), ("b", b), ("c", c)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"weight {name}={v!r} outside [0, 1]")
    total = a + b + c
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"kernel weights must sum to 1, got a+b+c={total!r}")
    k = a * bank.basis("motion", j_m) + b * bank.basis("isotropic", j_i) + c * bank.basis("anisotropic", j_a)
    k.setflags(write=False)
    return DynamicKernel(a, b, c, int(j_m), int(j_i), int(j_a), k)


def sample_dynamic_kernel(bank: KernelBank, rng: np.random.Generator, max_index: int = 4) -> DynamicKernel:
    """Uniform simplex weights via sorted-uniform spacings, uniform indices."""
    u = np.sort(rng.random(2))
    a, b, c = u[0], u[1] - u[0], 1.0 - u[1]
    j = rng.integers(1, max_index + 1, size=3)
    return synthesize_dynamic_kernel(bank, a, b, c, int(j[0]), int(j[1]), int(j[2]))


@dataclass(frozen=True)
class DegradationSpec:
    """One draw of the degradation model: blur kernel, subsampling, noise.

    ``gain`` is an optional global illumination factor applied before the
    blur (1.0 disables it).
    """

    kernel: DynamicKernel
    scale: int = 1
    noise_sigma: float = 0.0
    model_index: int = 1
    gain: float = 1.0

    def __post_init__(self):
        if self.scale not in (1, 2):
            raise ValueError(f"scale must be 1 or 2, got {self.scale}")
        if not 0.0 <= self.noise_sigma <= MAX_NOISE_SIGMA + 1e-15:
            raise ValueError(f"noise sigma {self.noise_sigma!r} outside [0, 10/255]")
        if self.model_index not in (1, 2, 3):
            raise ValueError(f"model index must be 1, 2 or 3, got {self.model_index}")
        if not 0.0 < self.gain <= 1.0:
            raise ValueError(f"gain {self.gain!r} outside (0, 1]")


def sample_degradation_spec(
    bank: KernelBank,
    rng: np.random.Generator,
    scale: int = 1,
    model_index: int = 1,
    low_light: bool = False,
    max_index: int = 4,
) -> DegradationSpec:
    kernel = sample_dynamic_kernel(bank, rng, max_index=max_index)
    sigma = float(rng.uniform(0.0, MAX_NOISE_SIGMA))
    gain = float(rng.uniform(0.3, 1.0)) if low_light else 1.0
    return DegradationSpec(kernel, scale=scale, noise_sigma=sigma, model_index=model_index, gain=gain)


def blur(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Same-size blur with replicate-edge padding."""
    return correlate_replicate(np.asarray(image, dtype=np.float64), np.asarray(kernel, dtype=np.float64))


def degrade(image: np.ndarray, spec: DegradationSpec, rng: np.random.Generator) -> np.ndarray:
    """``clamp((gain * image (*) k) subsampled by s + N(0, sigma^2))``.

    Noise is always drawn (and scaled by sigma), so the generator advances
    identically whatever the noise level.
    """
    image = np.asarray(image, dtype=np.float64)
    ks = spec.kernel.kernel.shape[0]
    if image.ndim != 2:
        raise ValueError(f"degrade expects a 2-d image, got shape {image.shape}")
    if image.shape[0] < ks or image.shape[1] < ks:
        raise ValueError(f"image {image.shape} smaller than the {ks}x{ks} kernel")
    x = image if spec.gain == 1.0 else spec.gain * image
    out = blur(x, spec.kernel.kernel)[:: spec.scale, :: spec.scale]
    out = out + spec.noise_sigma * rng.standard_normal(out.shape)
    return np.clip(out, 0.0, 1.0)
