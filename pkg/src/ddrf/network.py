"""Siamese restore-and-fuse network.

Two branches with separate weights extract features from the visible and
infrared inputs. Each input arrives concatenated with its degradation
kernel, projected onto a small PCA basis and broadcast ("stretched") to
constant planes. A 1-channel head per branch restores the source; a stack
of four dynamic convolutions fuses both feature sets (again conditioned on
both kernel projections) into the fused image.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import DiffArray
from .dynconv import DynamicConv, StaticConv
from .kernels import DynamicKernel, KernelBank, sample_dynamic_kernel


# ---------------------------------------------------------------------------
# kernel projection


@dataclass(frozen=True)
class KernelProjector:
    """Top principal directions of flattened dynamic kernels."""

    basis: np.ndarray  # [t, k_s*k_s], orthonormal rows
    mean: np.ndarray  # [k_s*k_s]

    @property
    def dims(self) -> int:
        return self.basis.shape[0]

    def coefficients(self, kernel) -> np.ndarray:
        k = kernel.kernel if isinstance(kernel, DynamicKernel) else np.asarray(kernel, dtype=np.float64)
        return self.basis @ (k.reshape(-1) - self.mean)

    def reconstruct(self, coeffs: np.ndarray) -> np.ndarray:
        side = int(round(np.sqrt(self.mean.size)))
        return (self.mean + coeffs @ self.basis).reshape(side, side)


def fit_projector(bank: KernelBank, samples: int = 2000, seed: int = 0, dims: int = 8) -> KernelProjector:
    """PCA of ``samples`` randomly drawn dynamic kernels."""
    if samples < 1000:
        raise ValueError(f"fit_projector needs at least 1000 samples, got {samples}")
    rng = np.random.default_rng(seed)
    flat = np.stack([sample_dynamic_kernel(bank, rng).kernel.reshape(-1) for _ in range(samples)])
    mu = flat.mean(axis=0)
    centred = flat - mu
    cov = centred.T @ centred / (samples - 1)
    if np.trace(cov) <= 1e-20:
        raise ValueError("degenerate kernel covariance: all sampled kernels are identical")
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:dims]
    basis = vecs[:, order].T.copy()
    # fix eigenvector signs so the basis is reproducible
    pivots = np.argmax(np.abs(basis), axis=1)
    basis *= np.sign(basis[np.arange(dims), pivots])[:, None]
    return KernelProjector(basis, mu)


def project_and_stretch(projector: KernelProjector, kernel, h: int, w: int) -> DiffArray:
    """``[t, h, w]`` constant planes, one per PCA coefficient."""
    if h <= 0 or w <= 0:
        raise ValueError(f"plane size must be positive, got {h}x{w}")
    c = projector.coefficients(kernel)
    return DiffArray(np.broadcast_to(c[:, None, None], (c.size, h, w)).copy())


def stretch_coefficients(coeffs: np.ndarray, h: int, w: int) -> DiffArray:
    """Batched broadcast of ``[B, t]`` coefficients into ``[B, t, h, w]``."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    return DiffArray(np.broadcast_to(coeffs[:, :, None, None], coeffs.shape + (h, w)).copy())


# ---------------------------------------------------------------------------
# network


@dataclass(frozen=True)
class NetConfig:
    t: int = 8
    candidates: int = 4
    branch_kind: str = "dynamic"
    branch_widths: tuple[int, ...] = (16, 32, 32)
    fusion_widths: tuple[int, ...] = (64, 32, 16)
    ksize: int = 3
    kernel_size: int = 15
    eq6_literal: bool = True
    condition_branches: bool = True
    condition_fusion: bool = True
    residual: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.branch_kind not in ("static", "dynamic"):
            raise ValueError(f"branch kind must be 'static' or 'dynamic', got {self.branch_kind!r}")
        if self.t < 1 or self.candidates < 1:
            raise ValueError("t and candidate count must be positive")


@dataclass
class NetworkParams:
    """All learnable layers plus the fixed kernel projector."""

    config: NetConfig
    projector: KernelProjector
    branch_v: list = field(default_factory=list)
    branch_i: list = field(default_factory=list)
    head_v: StaticConv | None = None
    head_i: StaticConv | None = None
    fusion: list = field(default_factory=list)

    def named_parameters(self) -> list[tuple[str, DiffArray]]:
        out = []
        groups = [("branch_v", self.branch_v), ("branch_i", self.branch_i), ("head_v", [self.head_v]),
                  ("head_i", [self.head_i]), ("fusion", self.fusion)]
        for gname, layers in groups:
            for li, layer in enumerate(layers):
                for pname, p in layer.parameters():
                    out.append((f"{gname}.{li}.{pname}", p))
        return out

    def parameters(self) -> list[DiffArray]:
        return [p for _, p in self.named_parameters()]

    def lr_scales(self) -> list[float]:
        """Per-array step multipliers, aligned with :meth:`parameters`."""
        layers = [*self.branch_v, *self.branch_i, self.head_v, self.head_i, *self.fusion]
        return [v for layer in layers for v in layer.lr_scales()]

    def layer_kinds(self) -> list[tuple[str, str]]:
        out = []
        for gname, layers in [("branch_v", self.branch_v), ("branch_i", self.branch_i), ("head_v", [self.head_v]),
                              ("head_i", [self.head_i]), ("fusion", self.fusion)]:
            for li, layer in enumerate(layers):
                out.append((f"{gname}.{li}", layer.kind))
        return out

    def count(self) -> int:
        return int(sum(p.values.size for p in self.parameters()))


def _make_layer(kind: str, c_in: int, c_out: int, cfg: NetConfig, rng: np.random.Generator):
    if kind == "static":
        return StaticConv(c_in, c_out, cfg.ksize, rng)
    return DynamicConv(c_in, c_out, cfg.ksize, cfg.candidates, rng, eq6_literal=cfg.eq6_literal)


def init_network(cfg: NetConfig, projector: KernelProjector) -> NetworkParams:
    if projector.dims != cfg.t:
        raise ValueError(f"projector has {projector.dims} dims, config expects t={cfg.t}")
    rng = np.random.default_rng(cfg.seed)
    params = NetworkParams(cfg, projector)
    branch_in = 1 + (cfg.t if cfg.condition_branches else 0)
    for branch in (params.branch_v, params.branch_i):
        c = branch_in
        for width in cfg.branch_widths:
            branch.append(_make_layer(cfg.branch_kind, c, width, cfg, rng))
            c = width
    feat = cfg.branch_widths[-1]
    params.head_v = StaticConv(feat, 1, cfg.ksize, rng)
    params.head_i = StaticConv(feat, 1, cfg.ksize, rng)
    if cfg.residual:
        # residual heads start as the identity on the degraded input
        for head in (params.head_v, params.head_i):
            head.weight.values = np.zeros(head.weight.shape)
    c = 2 * feat + (2 * cfg.t if cfg.condition_fusion else 0)
    for width in tuple(cfg.fusion_widths) + (1,):
        params.fusion.append(DynamicConv(c, width, cfg.ksize, cfg.candidates, rng, eq6_literal=cfg.eq6_literal))
        c = width
    return params


def _as_batch(x) -> tuple[DiffArray, bool]:
    x = ad.constant(x)
    if x.ndim == 2:
        return ad.reshape(x, (1, 1) + x.shape), True
    if x.ndim == 3:
        return ad.reshape(x, (x.shape[0], 1) + x.shape[1:]), False
    if x.ndim == 4 and x.shape[1] == 1:
        return x, False
    raise ValueError(f"expected image [H,W], batch [B,H,W] or [B,1,H,W], got shape {x.shape}")


def _coeff_batch(projector: KernelProjector, k, batch: int) -> np.ndarray:
    if isinstance(k, DynamicKernel):
        return np.tile(projector.coefficients(k), (batch, 1))
    arr = np.asarray(k, dtype=np.float64)
    if arr.ndim == 2 and arr.shape[0] == arr.shape[1] and arr.shape[0] * arr.shape[1] == projector.mean.size:
        return np.tile(projector.coefficients(arr), (batch, 1))
    if isinstance(k, (list, tuple)) and all(isinstance(e, DynamicKernel) for e in k):
        return np.stack([projector.coefficients(e) for e in k])
    if arr.ndim == 1 and arr.size == projector.dims:
        return np.tile(arr, (batch, 1))
    if arr.ndim == 2 and arr.shape == (batch, projector.dims):
        return arr
    raise ValueError(f"cannot interpret kernel conditioning of shape {arr.shape} for batch {batch}")


def _run(layers, x: DiffArray, final_activation: bool) -> DiffArray:
    for li, layer in enumerate(layers):
        x = layer(x)
        if final_activation or li < len(layers) - 1:
            x = ad.relu(x)
    return x


LOGIT_EPS = 1e-3


def input_logit(x: np.ndarray) -> np.ndarray:
    """Logit of the degraded input, clipped so saturated pixels stay finite."""
    x = np.clip(x, LOGIT_EPS, 1.0 - LOGIT_EPS)
    return np.log(x) - np.log1p(-x)


def forward(params: NetworkParams, x_v, x_i, k_dv, k_di):
    """Restore both sources and fuse them.

    Args:
        params: network.
        x_v, x_i: ``[H, W]``, ``[B, H, W]`` or ``[B, 1, H, W]`` images in [0, 1].
        k_dv, k_di: degradation kernels as DynamicKernel, raw ``[k_s, k_s]``
            kernel, list of DynamicKernel (one per sample), or PCA
            coefficients ``[t]`` / ``[B, t]``.

    Returns:
        ``(restored_v, restored_i, fused)`` DiffArrays shaped like the input.
    """
    xv, single = _as_batch(x_v)
    xi, _ = _as_batch(x_i)
    if xv.shape != xi.shape:
        raise ValueError(f"modality shapes differ: visible {xv.shape[1:]} vs infrared {xi.shape[1:]}")
    cfg = params.config
    batch, _, h, w = xv.shape
    planes_v = stretch_coefficients(_coeff_batch(params.projector, k_dv, batch), h, w)
    planes_i = stretch_coefficients(_coeff_batch(params.projector, k_di, batch), h, w)

    in_v = ad.concat_channels([xv, planes_v]) if cfg.condition_branches else xv
    in_i = ad.concat_channels([xi, planes_i]) if cfg.condition_branches else xi
    f_v = _run(params.branch_v, in_v, final_activation=True)
    f_i = _run(params.branch_i, in_i, final_activation=True)
    out_v, out_i = params.head_v(f_v), params.head_i(f_i)
    if cfg.residual:
        out_v = ad.add(out_v, input_logit(xv.values))
        out_i = ad.add(out_i, input_logit(xi.values))
    restored_v, restored_i = ad.sigmoid(out_v), ad.sigmoid(out_i)

    parts = [f_v, f_i] + ([planes_v, planes_i] if cfg.condition_fusion else [])
    fused = ad.sigmoid(_run(params.fusion, ad.concat_channels(parts), final_activation=False))

    if single:
        shape = (h, w)
        return ad.reshape(restored_v, shape), ad.reshape(restored_i, shape), ad.reshape(fused, shape)
    shape = (batch, h, w)
    return ad.reshape(restored_v, shape), ad.reshape(restored_i, shape), ad.reshape(fused, shape)


def swap_branches(params: NetworkParams) -> NetworkParams:
    """Same network with visible/infrared branch and head parameters exchanged."""
    return replace(params, branch_v=params.branch_i, branch_i=params.branch_v, head_v=params.head_i, head_i=params.head_v)


# ---------------------------------------------------------------------------
# hand-crafted fusion baseline


def laplacian_detail(x: np.ndarray) -> np.ndarray:
    """High-pass detail ``4x - (sum of 4 neighbours)``, replicate edges."""
    p = np.pad(x, 1, mode="edge")
    return 4.0 * x - p[:-2, 1:-1] - p[2:, 1:-1] - p[1:-1, :-2] - p[1:-1, 2:]


def fuse_manual(x_v: np.ndarray, x_i: np.ndarray) -> np.ndarray:
    """Per-pixel maximum plus half the Laplacian detail of the other source.

    Where the sources agree within 1e-9 the detail term is zero.
    """
    x_v = np.asarray(x_v, dtype=np.float64)
    x_i = np.asarray(x_i, dtype=np.float64)
    if x_v.shape != x_i.shape:
        raise ValueError(f"fuse_manual: shapes differ, {x_v.shape} vs {x_i.shape}")
    if x_v.ndim == 3:
        return np.stack([fuse_manual(a, b) for a, b in zip(x_v, x_i)])
    pick_v = x_v >= x_i
    selected = np.where(pick_v, x_v, x_i)
    other = np.where(pick_v, laplacian_detail(x_i), laplacian_detail(x_v))
    other[np.abs(x_v - x_i) <= 1e-9] = 0.0
    return np.clip(selected + 0.5 * other, 0.0, 1.0)
