"""Synthesised training sets of degraded crop pairs.

A dataset is a directory::

    manifest.txt      header + one CSV row per sample (every spec and seed)
    clean_v.npy       [count, crop, crop]
    clean_i.npy
    degraded_v.npy    [count, crop/s, crop/s]
    degraded_i.npy

Floats in the manifest are written with ``repr`` so specs round-trip
exactly; re-running ``degrade`` on a manifest row reproduces the stored crop
bit for bit.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .imageio import read_image
from .kernels import DegradationSpec, KernelBank, build_kernel_bank, degrade, sample_degradation_spec, synthesize_dynamic_kernel

MAGIC = "DDRF-DATASET 1"
ARRAYS = ("clean_v", "clean_i", "degraded_v", "degraded_i")
_SPEC_COLS = ("a", "b", "c", "jm", "ji", "ja", "scale", "sigma", "gain", "model", "noise_seed")
COLUMNS = ("index", "pair", "y", "x") + tuple(f"v_{c}" for c in _SPEC_COLS) + tuple(f"i_{c}" for c in _SPEC_COLS)


@dataclass(frozen=True)
class SamplePair:
    clean_v: np.ndarray
    clean_i: np.ndarray
    degraded_v: np.ndarray
    degraded_i: np.ndarray
    spec_v: DegradationSpec
    spec_i: DegradationSpec
    noise_seed_v: int
    noise_seed_i: int
    pair: str
    y: int
    x: int


@dataclass
class Dataset:
    clean_v: np.ndarray
    clean_i: np.ndarray
    degraded_v: np.ndarray
    degraded_i: np.ndarray
    specs_v: list
    specs_i: list
    rows: list
    header: dict

    def __len__(self) -> int:
        return self.clean_v.shape[0]


def find_source_pairs(source_dir) -> list[tuple[str, Path, Path]]:
    src = Path(source_dir)
    if not src.is_dir():
        raise ValueError(f"source directory {src} does not exist")
    vis, ir = {}, {}
    for p in sorted(src.iterdir()):
        if not p.is_file() or p.suffix.lower() not in (".png", ".bmp", ".tif", ".tiff", ".jpg", ".jpeg"):
            continue
        if p.stem.endswith("_v"):
            vis[p.stem[:-2]] = p
        elif p.stem.endswith("_i"):
            ir[p.stem[:-2]] = p
    unpaired = sorted([vis[k].name for k in vis.keys() - ir.keys()] + [ir[k].name for k in ir.keys() - vis.keys()])
    if unpaired:
        raise ValueError(f"unpaired source images: {', '.join(unpaired)}")
    if len(vis) < 2:
        raise ValueError(f"need at least 2 *_v/*_i image pairs in {src}, found {len(vis)}")
    return [(k, vis[k], ir[k]) for k in sorted(vis)]


def load_sources(source_dir, crop: int) -> list[tuple[str, np.ndarray, np.ndarray, str]]:
    out = []
    for name, pv, pi in find_source_pairs(source_dir):
        v, i = read_image(pv), read_image(pi)
        if v.shape != i.shape:
            raise ValueError(f"pair {pv.name}/{pi.name} not co-registered: shapes {v.shape} vs {i.shape}")
        if min(v.shape) < crop:
            raise ValueError(f"pair {pv.name}/{pi.name} of size {v.shape} is smaller than crop size {crop}")
        digest = hashlib.sha256(pv.read_bytes() + pi.read_bytes()).hexdigest()
        out.append((name, v, i, digest))
    return out


def _spec_fields(spec: DegradationSpec, noise_seed: int) -> list[str]:
    k = spec.kernel
    return [repr(float(k.a)), repr(float(k.b)), repr(float(k.c)), str(k.j_m), str(k.j_i), str(k.j_a),
            str(spec.scale), repr(float(spec.noise_sigma)), repr(float(spec.gain)), str(spec.model_index), str(noise_seed)]


def _spec_from_fields(bank: KernelBank, vals: list[str]) -> tuple[DegradationSpec, int]:
    a, b, c = float(vals[0]), float(vals[1]), float(vals[2])
    kernel = synthesize_dynamic_kernel(bank, a, b, c, int(vals[3]), int(vals[4]), int(vals[5]))
    spec = DegradationSpec(kernel, scale=int(vals[6]), noise_sigma=float(vals[7]), gain=float(vals[8]), model_index=int(vals[9]))
    return spec, int(vals[10])


def make_sample(sources, index: int, cfg: TrainConfig, seed: int, bank: KernelBank) -> SamplePair:
    """Sample ``index`` depends only on ``(seed, index)``."""
    rng = np.random.default_rng([seed, index])
    name, v, i, _ = sources[int(rng.integers(len(sources)))]
    crop = cfg.crop_size
    y = int(rng.integers(0, v.shape[0] - crop + 1))
    x = int(rng.integers(0, v.shape[1] - crop + 1))
    cv = v[y:y + crop, x:x + crop].copy()
    ci = i[y:y + crop, x:x + crop].copy()
    max_index = cfg.basis_count // 3
    spec_v = sample_degradation_spec(bank, rng, cfg.scale, 1, cfg.low_light, max_index)
    spec_i = sample_degradation_spec(bank, rng, cfg.scale, 2, cfg.low_light, max_index)
    seed_v, seed_i = (int(s) for s in rng.integers(0, 2**63 - 1, size=2))
    dv = degrade(cv, spec_v, np.random.default_rng(seed_v))
    di = degrade(ci, spec_i, np.random.default_rng(seed_i))
    return SamplePair(cv, ci, dv, di, spec_v, spec_i, seed_v, seed_i, name, y, x)


def synth_dataset(source_dir, count: int, cfg: TrainConfig, seed: int, out_dir) -> Path:
    if count <= 0:
        raise ValueError(f"sample count must be positive, got {count}")
    sources = load_sources(source_dir, cfg.crop_size)
    bank = build_kernel_bank(seed)
    samples = [make_sample(sources, n, cfg, seed, bank) for n in range(count)]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = [MAGIC, f"seed = {seed}", f"count = {count}", f"crop_size = {cfg.crop_size}", f"scale = {cfg.scale}",
             f"low_light = {int(cfg.low_light)}", f"basis_count = {cfg.basis_count}"]
    for name, _, _, digest in sources:
        lines.append(f"source {name} = {digest}")
    lines.append("END")
    lines.append(",".join(COLUMNS))
    for n, s in enumerate(samples):
        lines.append(",".join([str(n), s.pair, str(s.y), str(s.x)] + _spec_fields(s.spec_v, s.noise_seed_v)
                              + _spec_fields(s.spec_i, s.noise_seed_i)))
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")
    np.save(out / "clean_v.npy", np.stack([s.clean_v for s in samples]))
    np.save(out / "clean_i.npy", np.stack([s.clean_i for s in samples]))
    np.save(out / "degraded_v.npy", np.stack([s.degraded_v for s in samples]))
    np.save(out / "degraded_i.npy", np.stack([s.degraded_i for s in samples]))
    return out


def _read_manifest(path: Path):
    text = path.read_text().splitlines()
    if not text or text[0] != MAGIC:
        raise ValueError(f"{path} is not a DDRF dataset manifest")
    header, sources = {}, {}
    k = 1
    while text[k] != "END":
        key, _, value = text[k].partition(" = ")
        if key.startswith("source "):
            sources[key[7:]] = value
        else:
            header[key] = value
        k += 1
    cols = text[k + 1].split(",")
    if tuple(cols) != COLUMNS:
        raise ValueError(f"{path}: unexpected manifest columns")
    rows = [dict(zip(cols, line.split(","))) for line in text[k + 2:] if line]
    header["sources"] = sources
    return header, rows


def load_dataset(path) -> Dataset:
    root = Path(path)
    header, rows = _read_manifest(root / "manifest.txt")
    bank = build_kernel_bank(int(header["seed"]))
    arrays = {name: np.load(root / f"{name}.npy") for name in ARRAYS}
    specs_v, specs_i = [], []
    for row in rows:
        specs_v.append(_spec_from_fields(bank, [row[f"v_{c}"] for c in _SPEC_COLS]))
        specs_i.append(_spec_from_fields(bank, [row[f"i_{c}"] for c in _SPEC_COLS]))
    if len(rows) != arrays["clean_v"].shape[0]:
        raise ValueError(f"{root}: manifest lists {len(rows)} samples, arrays hold {arrays['clean_v'].shape[0]}")
    return Dataset(specs_v=specs_v, specs_i=specs_i, rows=rows, header=header, **arrays)


def regenerate_degraded(ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Re-run every recorded degradation from the manifest alone."""
    dv = np.stack([degrade(c, spec, np.random.default_rng(seed)) for c, (spec, seed) in zip(ds.clean_v, ds.specs_v)])
    di = np.stack([degrade(c, spec, np.random.default_rng(seed)) for c, (spec, seed) in zip(ds.clean_i, ds.specs_i)])
    return dv, di


def dataset_hash(path) -> str:
    root = Path(path)
    h = hashlib.sha256()
    for name in ("manifest.txt",) + tuple(f"{a}.npy" for a in ARRAYS):
        h.update(name.encode())
        h.update((root / name).read_bytes())
    return h.hexdigest()
