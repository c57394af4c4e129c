"""Training loop, held-out evaluation and inference helpers."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import GradientTape
from .checkpoint import save_checkpoint
from .config import TrainConfig
from .dataset import Dataset, load_dataset
from .kernels import build_kernel_bank, degrade, sample_degradation_spec
from .losses import loss_negative, loss_pixel, loss_positive, loss_similarity, loss_total
from .metrics import psnr
from .network import NetConfig, NetworkParams, fit_projector, forward, fuse_manual, init_network

log = logging.getLogger(__name__)

CSV_HEADER = "epoch,similarity,negative,positive,total"


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainResult:
    params: NetworkParams
    history: list  # one (epoch, similarity, negative, positive, total) tuple per epoch
    checkpoint: Path | None
    loss_csv: Path | None


def net_config(cfg: TrainConfig) -> NetConfig:
    return NetConfig(t=cfg.t, candidates=cfg.candidates, branch_kind=cfg.branch_kind, eq6_literal=cfg.eq6_literal,
                     condition_branches=cfg.condition_branches, condition_fusion=cfg.condition_fusion, residual=cfg.residual,
                     seed=cfg.seed)


def build_network(cfg: TrainConfig) -> NetworkParams:
    bank = build_kernel_bank(cfg.seed)
    projector = fit_projector(bank, cfg.projector_samples, seed=cfg.seed, dims=cfg.t)
    return init_network(net_config(cfg), projector)


def network_inputs(ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Degraded crops, bilinearly brought back to the clean size when subsampled."""
    factor = ds.clean_v.shape[-1] // ds.degraded_v.shape[-1]
    return ad.upsample_bilinear_numpy(ds.degraded_v, factor), ad.upsample_bilinear_numpy(ds.degraded_i, factor)


def kernel_coefficients(params: NetworkParams, ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    proj = params.projector
    cv = np.stack([proj.coefficients(spec.kernel) for spec, _ in ds.specs_v])
    ci = np.stack([proj.coefficients(spec.kernel) for spec, _ in ds.specs_i])
    return cv, ci


def _negatives(clean_v, clean_i, fused, cfg: TrainConfig, bank, rng) -> list[np.ndarray]:
    """One degraded rendition per source and one of the detached fused output."""
    max_index = cfg.basis_count // 3
    out = []
    for model, images in ((1, clean_v), (2, clean_i), (3, fused)):
        batch = []
        for img in images:
            spec = sample_degradation_spec(bank, rng, cfg.scale, model, False, max_index)
            d = degrade(img, spec, rng)
            batch.append(ad.upsample_bilinear_numpy(d, cfg.scale))
        out.append(np.stack(batch))
    return out


def _make_optimizer(cfg: TrainConfig, params: NetworkParams):
    arrays, scales = params.parameters(), params.lr_scales()
    if cfg.optimizer == "adam":
        return ad.Adam(arrays, lr=cfg.lr, lr_scales=scales)
    return ad.SGD(arrays, lr=cfg.lr, momentum=cfg.momentum, lr_scales=scales)


def train_step(params: NetworkParams, batch: dict, cfg: TrainConfig, bank, rng):
    """Forward, loss and gradients for one batch; returns (grads, LossReport)."""
    with GradientTape() as tape:
        rv, ri, fused = forward(params, batch["x_v"], batch["x_i"], batch["k_v"], batch["k_i"])
        sim = loss_similarity([(rv, batch["clean_v"]), (ri, batch["clean_i"]), (fused, (batch["clean_v"], batch["clean_i"]))])
        if cfg.w_pix:
            pix = loss_pixel([(rv, batch["clean_v"]), (ri, batch["clean_i"])])
            sim = sim + ad.scale(pix, cfg.w_pix)
        negs_np = _negatives(batch["clean_v"], batch["clean_i"], ad.detach(fused).values, cfg, bank, rng)
        negs = [loss_negative(fused, [n], literal=cfg.eq8_literal) for n in negs_np]
        pos = loss_positive(fused, batch["reference"])
        total, report = loss_total(negs, sim, pos, w_sim=cfg.w_sim, w_pos=cfg.w_pos, w_neg=cfg.w_neg)
    return tape.backward(total), report


def train(dataset, cfg: TrainConfig, out_dir=None, params: NetworkParams | None = None) -> TrainResult:
    """Minibatch training on a synthesised dataset.

    Writes ``loss.csv`` and ``checkpoint.ddrf`` (plus ``checkpoint_epochNNN.ddrf``
    every 10 epochs) into ``out_dir`` when given.
    """
    ds = dataset if isinstance(dataset, Dataset) else load_dataset(dataset)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    params = params if params is not None else build_network(cfg)
    bank = build_kernel_bank(cfg.seed)
    x_v, x_i = network_inputs(ds)
    coeff_v, coeff_i = kernel_coefficients(params, ds)
    reference = fuse_manual(ds.clean_v, ds.clean_i)
    opt = _make_optimizer(cfg, params)
    n = len(ds)
    history = []
    last_finite = None
    csv_path = out / "loss.csv" if out is not None else None
    if csv_path is not None:
        csv_path.write_text(CSV_HEADER + "\n")
    for epoch in range(1, cfg.epochs + 1):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        sums = np.zeros(4)
        batches = 0
        for b, start in enumerate(range(0, n, cfg.batchsize)):
            idx = np.sort(order[start:start + cfg.batchsize])
            batch = {
                "x_v": x_v[idx], "x_i": x_i[idx], "k_v": coeff_v[idx], "k_i": coeff_i[idx],
                "clean_v": ds.clean_v[idx], "clean_i": ds.clean_i[idx], "reference": reference[idx],
            }
            rng = np.random.default_rng([cfg.seed, epoch, b, 3])
            grads, report = train_step(params, batch, cfg, bank, rng)
            if not np.isfinite(report.total) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {b}; last finite loss {last_finite!r}"
                )
            last_finite = report.total
            opt.step(grads)
            sums += (report.similarity, report.negative, report.positive, report.total)
            batches += 1
        means = sums / batches
        history.append((epoch, *means.tolist()))
        log.info("epoch %d: sim %.5f neg %.5f pos %.5f total %.5f", epoch, *means)
        if csv_path is not None:
            with csv_path.open("a", newline="\n") as fh:
                fh.write(f"{epoch},{means[0]:.17g},{means[1]:.17g},{means[2]:.17g},{means[3]:.17g}\n")
        if out is not None and epoch % 10 == 0:
            save_checkpoint(params, out / f"checkpoint_epoch{epoch:03d}.ddrf")
    ckpt = save_checkpoint(params, out / "checkpoint.ddrf") if out is not None else None
    return TrainResult(params, history, ckpt, csv_path)


def smoothed(values, window: int = 5) -> np.ndarray:
    """Trailing moving average (shorter window at the start)."""
    v = np.asarray(values, dtype=np.float64)
    c = np.cumsum(np.insert(v, 0, 0.0))
    out = np.empty_like(v)
    for k in range(v.size):
        lo = max(0, k + 1 - window)
        out[k] = (c[k + 1] - c[lo]) / (k + 1 - lo)
    return out


def infer(params: NetworkParams, x_v, x_i, k_v, k_i, batch: int = 32):
    """Inference without recording; returns numpy (restored_v, restored_i, fused)."""
    x_v = np.asarray(x_v, dtype=np.float64)
    x_i = np.asarray(x_i, dtype=np.float64)
    if x_v.ndim == 2:
        rv, ri, f = forward(params, x_v, x_i, k_v, k_i)
        return rv.values, ri.values, f.values
    outs = [[], [], []]
    for s in range(0, x_v.shape[0], batch):
        kv = k_v[s:s + batch] if np.ndim(k_v) == 2 else k_v
        ki = k_i[s:s + batch] if np.ndim(k_i) == 2 else k_i
        res = forward(params, x_v[s:s + batch], x_i[s:s + batch], kv, ki)
        for o, r in zip(outs, res):
            o.append(r.values)
    return tuple(np.concatenate(o) for o in outs)


@dataclass(frozen=True)
class RestorationScores:
    restored: np.ndarray  # [count, 2] PSNR of restored (v, i) vs clean
    degraded: np.ndarray  # [count, 2] PSNR of network input (v, i) vs clean

    @property
    def median_restored(self) -> float:
        return float(np.median(self.restored.mean(axis=1)))

    @property
    def median_degraded(self) -> float:
        return float(np.median(self.degraded.mean(axis=1)))

    @property
    def gain(self) -> float:
        return self.median_restored - self.median_degraded


def evaluate_restoration(params: NetworkParams, dataset) -> RestorationScores:
    """PSNR of restored and degraded crops against clean ones, per sample."""
    ds = dataset if isinstance(dataset, Dataset) else load_dataset(dataset)
    x_v, x_i = network_inputs(ds)
    coeff_v, coeff_i = kernel_coefficients(params, ds)
    rv, ri, _ = infer(params, x_v, x_i, coeff_v, coeff_i)
    restored = np.array([[psnr(rv[n], ds.clean_v[n]), psnr(ri[n], ds.clean_i[n])] for n in range(len(ds))])
    degraded = np.array([[psnr(x_v[n], ds.clean_v[n]), psnr(x_i[n], ds.clean_i[n])] for n in range(len(ds))])
    return RestorationScores(restored, degraded)
