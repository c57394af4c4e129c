"""Command line for kernel export, dataset synthesis, training, fusion and evaluation.

Every subcommand accepts the global ``--seed`` and ``--config FILE`` flags.
Exit status is 0 on success, 2 on invalid input and 1 when training diverges.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .ablation import ABLATIONS, run_ablation, write_ablation_csv
from .checkpoint import load_checkpoint
from .config import TrainConfig, load_config
from .dataset import find_source_pairs, synth_dataset
from .imageio import read_image, write_image, write_matrix
from .kernels import FAMILIES, DegradationSpec, build_kernel_bank, sample_dynamic_kernel, synthesize_dynamic_kernel
from .metrics import evaluate_pair
from .network import forward
from .scenes import write_scene_pairs
from .train import TrainingError, train

log = logging.getLogger("ddrf")

SPEC_KEYS = ("a", "b", "c", "jm", "ji", "ja", "scale", "sigma", "gain")
EVAL_HEADER = "pair,en,ag,ssim,vif,psnr,mean"


class UsageError(ValueError):
    pass


def _config(args) -> TrainConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else TrainConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    return cfg


def parse_spec_text(text: str, seed: int = 0) -> DegradationSpec:
    """``key = value`` lines with keys a, b, c, jm, ji, ja and optional scale, sigma, gain."""
    vals = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key = key.strip().lower()
        if not sep or key not in SPEC_KEYS:
            raise UsageError(f"spec line {lineno}: expected one of {', '.join(SPEC_KEYS)} as 'key = value'")
        vals[key] = raw.strip()
    missing = [k for k in SPEC_KEYS[:6] if k not in vals]
    if missing:
        raise UsageError(f"spec missing field: {missing[0]}")
    try:
        kernel = synthesize_dynamic_kernel(build_kernel_bank(seed), float(vals["a"]), float(vals["b"]), float(vals["c"]),
                                           int(vals["jm"]), int(vals["ji"]), int(vals["ja"]))
        return DegradationSpec(kernel, scale=int(vals.get("scale", 1)), noise_sigma=float(vals.get("sigma", 0.0)),
                               gain=float(vals.get("gain", 1.0)))
    except ValueError as exc:
        raise UsageError(f"invalid spec: {exc}") from None


def format_spec(spec: DegradationSpec) -> str:
    k = spec.kernel
    vals = (k.a, k.b, k.c, k.j_m, k.j_i, k.j_a, spec.scale, spec.noise_sigma, spec.gain)
    return "".join(f"{key} = {v!r}\n" for key, v in zip(SPEC_KEYS, vals))


def fuse_images(params, x_v, x_i, spec_v: DegradationSpec | None = None, spec_i: DegradationSpec | None = None):
    """Restore and fuse one registered pair; returns numpy (restored_v, restored_i, fused).

    Without specs the bank-mean kernel is assumed at scale 1. A scale-2 spec
    means the input is the subsampled image and is upsampled first.
    """
    x_v = np.asarray(x_v, dtype=np.float64)
    x_i = np.asarray(x_i, dtype=np.float64)
    if x_v.shape != x_i.shape:
        raise UsageError(f"visible {x_v.shape} and infrared {x_i.shape} images are not co-registered")
    mean = build_kernel_bank(params.config.seed).mean_kernel()
    k_v = spec_v.kernel.kernel if spec_v is not None else mean
    k_i = spec_i.kernel.kernel if spec_i is not None else mean
    s_v = spec_v.scale if spec_v is not None else 1
    s_i = spec_i.scale if spec_i is not None else 1
    if s_v != s_i:
        raise UsageError(f"visible and infrared specs disagree on scale ({s_v} vs {s_i})")
    if s_v != 1:
        x_v = ad.upsample_bilinear_numpy(x_v, s_v)
        x_i = ad.upsample_bilinear_numpy(x_i, s_v)
    rv, ri, f = forward(params, x_v, x_i, k_v, k_i)
    return rv.values, ri.values, f.values


def _pair_stem(path: Path) -> str:
    stem = path.stem
    return stem[:-2] if stem.endswith(("_v", "_i")) else stem


# ---------------------------------------------------------------------------
# subcommands


def cmd_kernels_export(args) -> int:
    cfg = _config(args)
    bank = build_kernel_bank(cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for f, family in enumerate(FAMILIES):
        for j in range(1, 5):
            k = bank.kernels[4 * f + j - 1]
            write_matrix(out / f"{family}_{j}.txt", k)
            write_image(out / f"{family}_{j}.png", k / k.max())
    dyn = sample_dynamic_kernel(bank, np.random.default_rng(cfg.seed))
    write_matrix(out / "dynamic.txt", dyn.kernel)
    write_image(out / "dynamic.png", dyn.kernel / dyn.kernel.max())
    (out / "dynamic_spec.txt").write_text(format_spec(DegradationSpec(dyn)))
    print(f"wrote 12 basis kernels and one sampled dynamic kernel to {out}")
    return 0


def cmd_make_scenes(args) -> int:
    paths = write_scene_pairs(args.out, count=args.count, size=args.size, seed=_config(args).seed)
    print(f"wrote {len(paths)} scene pairs to {args.out}")
    return 0


def cmd_synth_dataset(args) -> int:
    cfg = _config(args)
    out = synth_dataset(args.sources, args.count, cfg, cfg.seed, args.out)
    print(f"wrote {args.count} samples to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    if args.epochs is not None:
        cfg = cfg.with_overrides(epochs=args.epochs)
    res = train(args.dataset, cfg, args.out)
    last = res.history[-1]
    print(f"trained {cfg.epochs} epochs; final total loss {last[4]:.6f}; checkpoint {res.checkpoint}")
    return 0


def cmd_fuse(args) -> int:
    params = load_checkpoint(args.checkpoint)
    seed = params.config.seed
    spec_v = parse_spec_text(Path(args.spec_v).read_text(), seed) if args.spec_v else None
    spec_i = parse_spec_text(Path(args.spec_i).read_text(), seed) if args.spec_i else None
    rv, ri, f = fuse_images(params, read_image(args.visible), read_image(args.infrared), spec_v, spec_i)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    name = args.name or _pair_stem(Path(args.visible))
    for suffix, img in (("restored_v", rv), ("restored_i", ri), ("fused", f)):
        write_image(out / f"{name}_{suffix}.png", img)
    print(f"wrote {name}_restored_v.png, {name}_restored_i.png, {name}_fused.png to {out}")
    return 0


def cmd_eval(args) -> int:
    if (args.fused is None) == (args.checkpoint is None):
        raise UsageError("eval needs exactly one of --fused DIR or --checkpoint FILE")
    params = load_checkpoint(args.checkpoint) if args.checkpoint else None
    rows = []
    for name, pv, pi in find_source_pairs(args.sources):
        x_v, x_i = read_image(pv), read_image(pi)
        if params is not None:
            fused = fuse_images(params, x_v, x_i)[2]
        else:
            path = Path(args.fused) / f"{name}_fused.png"
            if not path.is_file():
                raise UsageError(f"no fused image {path.name} for pair {name}")
            fused = read_image(path)
        report = evaluate_pair(x_v, x_i, fused)
        if report.vif_reduced:
            log.warning("pair %s: vif over %d pyramid levels only", name, report.vif_levels)
        rows.append((name, report.values()))
    means = np.mean([v for _, v in rows], axis=0)
    lines = [EVAL_HEADER] + [",".join([name] + [f"{x:.17g}" for x in vals]) for name, vals in rows]
    lines.append(",".join(["mean"] + [f"{x:.17g}" for x in means]))
    with Path(args.out).open("w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"evaluated {len(rows)} pairs; mean score {means[-1]:.4f}; wrote {args.out}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    if args.epochs is not None:
        cfg = cfg.with_overrides(epochs=args.epochs)
    results = run_ablation(args.name, cfg, args.dataset, args.holdout, args.work)
    write_ablation_csv(args.out, args.name, results, args.dataset, args.holdout)
    for r in results:
        print(f"{r.name}: restored psnr {r.restored_psnr:.3f} dB, fused mean {r.report.mean:.4f}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _ablation_name(value: str) -> str:
    if value not in ABLATIONS:
        raise argparse.ArgumentTypeError(f"unknown ablation {value!r}; valid names: {', '.join(sorted(ABLATIONS))}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the config seed")
    common.add_argument("--config", metavar="FILE", default=argparse.SUPPRESS, help="key = value config file")

    parser = argparse.ArgumentParser(prog="ddrf", parents=[common], description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    kern = sub.add_parser("kernels", parents=[common], help="kernel bank utilities")
    ksub = kern.add_subparsers(dest="action", required=True)
    exp = ksub.add_parser("export", parents=[common], help="write the 12 basis kernels as text and PNG")
    exp.add_argument("--out", required=True)
    exp.set_defaults(func=cmd_kernels_export)

    p = sub.add_parser("make-scenes", parents=[common], help="write procedural visible/infrared pairs")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--size", type=int, default=96)
    p.set_defaults(func=cmd_make_scenes)

    p = sub.add_parser("synth-dataset", parents=[common], help="synthesise degraded training crops")
    p.add_argument("--sources", required=True, help="directory of *_v / *_i image pairs")
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_dataset)

    p = sub.add_parser("train", parents=[common], help="train on a synthesised dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, help="override the config epoch count")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fuse", parents=[common], help="restore and fuse one image pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--visible", required=True)
    p.add_argument("--infrared", required=True)
    p.add_argument("--spec-v", metavar="FILE", help="degradation spec of the visible image")
    p.add_argument("--spec-i", metavar="FILE", help="degradation spec of the infrared image")
    p.add_argument("--out", required=True)
    p.add_argument("--name", help="output file prefix (default: visible stem without _v)")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", parents=[common], help="fusion metrics for every source pair")
    p.add_argument("--sources", required=True)
    p.add_argument("--fused", metavar="DIR", help="directory of <pair>_fused.png images")
    p.add_argument("--checkpoint", help="fuse with this checkpoint instead of reading --fused")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", parents=[common], help="train and compare variants")
    p.add_argument("name", type=_ablation_name, help=f"one of {', '.join(sorted(ABLATIONS))}")
    p.add_argument("--dataset", required=True)
    p.add_argument("--holdout", help="evaluation dataset (default: the training set)")
    p.add_argument("--out", required=True)
    p.add_argument("--work", help="directory for per-variant checkpoints and loss CSVs")
    p.add_argument("--epochs", type=int, help="override the config epoch count")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except TrainingError as exc:
        print(f"ddrf: training failed: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError, NotADirectoryError) as exc:
        print(f"ddrf: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
