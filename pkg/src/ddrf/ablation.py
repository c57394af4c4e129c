"""Scripted variant comparisons trained on one shared dataset."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .dataset import Dataset, dataset_hash, load_dataset
from .metrics import MetricReport, evaluate_pair, make_report
from .network import NetworkParams
from .train import evaluate_restoration, infer, kernel_coefficients, network_inputs, train

ABLATIONS = {
    "static-vs-dynamic": (("static", {"branch_kind": "static"}), ("dynamic", {"branch_kind": "dynamic"})),
    "eq8-sign": (("prose", {"eq8_literal": False}), ("literal", {"eq8_literal": True})),
    "loss-terms": (("similarity-only", {"w_pos": 0.0, "w_neg": 0.0}), ("full", {})),
}
METRICS = ("en", "ag", "ssim", "vif", "psnr", "mean", "restored_psnr")


@dataclass(frozen=True)
class VariantResult:
    name: str
    config: TrainConfig
    report: MetricReport  # fused-image metrics, averaged over evaluation crops
    restored_psnr: float  # median per-crop mean of restored v/i PSNR
    degraded_psnr: float

    def metric(self, name: str) -> float:
        if name == "restored_psnr":
            return self.restored_psnr
        return getattr(self.report, name)


def variants(name: str) -> tuple:
    if name not in ABLATIONS:
        raise ValueError(f"unknown ablation {name!r}; valid names: {', '.join(sorted(ABLATIONS))}")
    return ABLATIONS[name]


def fused_report(params: NetworkParams, ds: Dataset) -> MetricReport:
    """Mean of per-crop fusion reports against the clean sources."""
    x_v, x_i = network_inputs(ds)
    cv, ci = kernel_coefficients(params, ds)
    _, _, fused = infer(params, x_v, x_i, cv, ci)
    reports = [evaluate_pair(ds.clean_v[n], ds.clean_i[n], fused[n]) for n in range(len(ds))]
    cols = np.array([[r.en, r.ag, r.ssim, r.vif, r.psnr] for r in reports])
    en, ag, ss, vf, ps = cols.mean(axis=0)
    return make_report(en, ag, ss, vf, ps, min(r.vif_levels for r in reports))


def run_ablation(name: str, cfg: TrainConfig, dataset, holdout=None, out_dir=None) -> list[VariantResult]:
    """Train each variant of ``name`` from the same seed and evaluate it.

    ``holdout`` defaults to the training set. Per-variant training output
    goes to ``out_dir/<variant>`` when ``out_dir`` is given.
    """
    specs = variants(name)
    ds = dataset if isinstance(dataset, Dataset) else load_dataset(dataset)
    hold = ds if holdout is None else (holdout if isinstance(holdout, Dataset) else load_dataset(holdout))
    results = []
    for variant, overrides in specs:
        vcfg = cfg.with_overrides(**overrides)
        sub = Path(out_dir) / variant if out_dir is not None else None
        res = train(ds, vcfg, sub)
        scores = evaluate_restoration(res.params, hold)
        results.append(VariantResult(variant, vcfg, fused_report(res.params, hold),
                                     scores.median_restored, scores.median_degraded))
    return results


def format_ablation_csv(name: str, results: list[VariantResult], hashes: dict[str, str]) -> str:
    """Long-format ``metric,variant,value`` with ``#`` header comments."""
    lines = [f"# ablation {name}"]
    lines += [f"# {label} sha256 {digest}" for label, digest in hashes.items()]
    lines.append("metric,variant,value")
    for metric in METRICS:
        for r in results:
            lines.append(f"{metric},{r.name},{r.metric(metric):.17g}")
    return "\n".join(lines) + "\n"


def write_ablation_csv(path, name: str, results: list[VariantResult], dataset_dir, holdout_dir=None) -> Path:
    hashes = {"dataset": dataset_hash(dataset_dir)}
    if holdout_dir is not None:
        hashes["holdout"] = dataset_hash(holdout_dir)
    path = Path(path)
    with path.open("w", newline="\n") as fh:
        fh.write(format_ablation_csv(name, results, hashes))
    return path
