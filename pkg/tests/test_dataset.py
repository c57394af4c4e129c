import numpy as np
import pytest

from ddrf.config import TrainConfig
from ddrf.dataset import dataset_hash, find_source_pairs, load_dataset, regenerate_degraded, synth_dataset
from ddrf.imageio import write_image
from conftest import TINY


def test_layout_and_bounds(tiny_dataset):
    ds = load_dataset(tiny_dataset)
    assert len(ds) == 16
    assert ds.clean_v.shape == ds.degraded_i.shape == (16, 32, 32)
    for arr in (ds.clean_v, ds.clean_i, ds.degraded_v, ds.degraded_i):
        assert arr.min() >= 0.0 and arr.max() <= 1.0
    for (sv, _), (si, _) in zip(ds.specs_v, ds.specs_i):
        assert sv.model_index == 1 and si.model_index == 2


def test_manifest_regenerates_degradations(tiny_dataset):
    ds = load_dataset(tiny_dataset)
    dv, di = regenerate_degraded(ds)
    assert np.max(np.abs(dv - ds.degraded_v)) <= 1e-12
    assert np.max(np.abs(di - ds.degraded_i)) <= 1e-12


def test_same_seed_same_bytes(sources, tiny_dataset, tmp_path):
    again = synth_dataset(sources, 16, TINY, 0, tmp_path / "again")
    assert dataset_hash(again) == dataset_hash(tiny_dataset)
    other = synth_dataset(sources, 16, TINY, 1, tmp_path / "other")
    assert dataset_hash(other) != dataset_hash(tiny_dataset)


def test_prefix_stability(sources, tiny_dataset, tmp_path):
    # sample n depends only on (seed, n)
    short = load_dataset(synth_dataset(sources, 5, TINY, 0, tmp_path / "short"))
    full = load_dataset(tiny_dataset)
    assert np.array_equal(short.degraded_v, full.degraded_v[:5])


def test_scale_two(sources, tmp_path):
    cfg = TrainConfig(scale=2)
    ds = load_dataset(synth_dataset(sources, 4, cfg, 0, tmp_path / "s2"))
    assert ds.degraded_v.shape == (4, 16, 16)


def test_source_rejections(tmp_path):
    img = np.zeros((40, 40))
    write_image(tmp_path / "a_v.png", img)
    write_image(tmp_path / "a_i.png", img)
    with pytest.raises(ValueError, match="at least 2"):
        find_source_pairs(tmp_path)
    write_image(tmp_path / "b_v.png", img)
    with pytest.raises(ValueError, match="unpaired source images: b_v.png"):
        find_source_pairs(tmp_path)
    write_image(tmp_path / "b_i.png", np.zeros((20, 40)))
    with pytest.raises(ValueError, match="not co-registered"):
        synth_dataset(tmp_path, 2, TrainConfig(), 0, tmp_path / "out")
    with pytest.raises(ValueError, match="does not exist"):
        find_source_pairs(tmp_path / "missing")


def test_small_source_rejected(tmp_path):
    for name in ("a", "b"):
        write_image(tmp_path / f"{name}_v.png", np.zeros((20, 20)))
        write_image(tmp_path / f"{name}_i.png", np.zeros((20, 20)))
    with pytest.raises(ValueError, match="smaller than crop size 32"):
        synth_dataset(tmp_path, 2, TrainConfig(), 0, tmp_path / "out")
