import subprocess
import sys

import numpy as np
import pytest

from ddrf.checkpoint import save_checkpoint
from ddrf.cli import fuse_images, main, parse_spec_text
from ddrf.config import format_config
from ddrf.imageio import read_image
from ddrf.metrics import evaluate_pair
from conftest import TINY


@pytest.fixture
def ckpt(small_net, tmp_path):
    return save_checkpoint(small_net, tmp_path / "net.ddrf")


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(format_config(TINY))
    return path


def test_kernels_export(tmp_path):
    assert main(["kernels", "export", "--out", str(tmp_path / "k")]) == 0
    txt = sorted(p.name for p in (tmp_path / "k").glob("*.txt"))
    assert len(txt) == 14 and "motion_1.txt" in txt and "dynamic_spec.txt" in txt
    k = np.loadtxt(tmp_path / "k" / "anisotropic_4.txt")
    assert k.shape == (15, 15) and abs(k.sum() - 1) < 1e-9
    spec = parse_spec_text((tmp_path / "k" / "dynamic_spec.txt").read_text())
    assert np.allclose(spec.kernel.kernel, np.loadtxt(tmp_path / "k" / "dynamic.txt"), rtol=0, atol=1e-15)


def test_fuse_writes_three_images_of_input_size(ckpt, sources, tmp_path, small_net):
    out = tmp_path / "fused"
    code = main(["fuse", "--checkpoint", str(ckpt), "--visible", str(sources / "scene00_v.png"),
                 "--infrared", str(sources / "scene00_i.png"), "--out", str(out)])
    assert code == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["scene00_fused.png", "scene00_restored_i.png", "scene00_restored_v.png"]
    fused = read_image(out / "scene00_fused.png")
    x_v, x_i = read_image(sources / "scene00_v.png"), read_image(sources / "scene00_i.png")
    assert fused.shape == x_v.shape
    assert np.max(np.abs(fused - fuse_images(small_net, x_v, x_i)[2])) <= 0.5 / 255 + 1e-12


def test_fuse_with_scale_two_spec(ckpt, tmp_path, small_net):
    from ddrf.imageio import write_image

    rng = np.random.default_rng(0)
    write_image(tmp_path / "p_v.png", rng.random((20, 24)))
    write_image(tmp_path / "p_i.png", rng.random((20, 24)))
    spec = tmp_path / "s.txt"
    spec.write_text("a = 0\nb = 1\nc = 0\njm = 1\nji = 2\nja = 1\nscale = 2\n")
    code = main(["fuse", "--checkpoint", str(ckpt), "--visible", str(tmp_path / "p_v.png"),
                 "--infrared", str(tmp_path / "p_i.png"), "--spec-v", str(spec), "--spec-i", str(spec),
                 "--out", str(tmp_path), "--name", "up"])
    assert code == 0 and read_image(tmp_path / "up_fused.png").shape == (40, 48)


def test_fuse_error_exit_codes(ckpt, sources, tmp_path, capsys):
    args = ["fuse", "--checkpoint", str(ckpt), "--visible", str(sources / "scene00_v.png"), "--out", str(tmp_path)]
    assert main(args + ["--infrared", str(tmp_path / "missing.png")]) == 2
    bad = tmp_path / "bad.txt"
    bad.write_text("a = 0.5\nb = 0.5\n")
    assert main(args + ["--infrared", str(sources / "scene00_i.png"), "--spec-v", str(bad)]) == 2
    assert "spec missing field: c" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["fuse", "--checkpoint", str(ckpt)])
    assert exc.value.code == 2


def test_eval_csv(ckpt, sources, tmp_path, small_net):
    fused_dir = tmp_path / "f"
    for stem in ("scene00", "scene01", "scene02"):
        main(["fuse", "--checkpoint", str(ckpt), "--visible", str(sources / f"{stem}_v.png"),
              "--infrared", str(sources / f"{stem}_i.png"), "--out", str(fused_dir)])
    out = tmp_path / "m.csv"
    assert main(["eval", "--sources", str(sources), "--fused", str(fused_dir), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "pair,en,ag,ssim,vif,psnr,mean" and len(lines) == 5
    assert lines[-1].startswith("mean,")
    row = [float(v) for v in lines[1].split(",")[1:]]
    ref = evaluate_pair(read_image(sources / "scene00_v.png"), read_image(sources / "scene00_i.png"),
                        read_image(fused_dir / "scene00_fused.png"))
    assert row == list(ref.values())
    assert main(["eval", "--sources", str(sources), "--out", str(out)]) == 2


def test_unknown_ablation_lists_names(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["ablate", "nope", "--dataset", "x", "--out", "y"])
    assert exc.value.code == 2
    err = capsys.readouterr().err
    assert "static-vs-dynamic" in err and "loss-terms" in err


def test_train_and_ablate(tiny_dataset, tiny_config, tmp_path):
    assert main(["train", "--config", str(tiny_config), "--dataset", str(tiny_dataset), "--out", str(tmp_path / "t")]) == 0
    assert (tmp_path / "t" / "checkpoint.ddrf").is_file()
    out = tmp_path / "ab.csv"
    code = main(["ablate", "eq8-sign", "--config", str(tiny_config), "--dataset", str(tiny_dataset),
                 "--out", str(out), "--epochs", "1"])
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "# ablation eq8-sign" and lines[1].startswith("# dataset sha256 ")
    assert lines[2] == "metric,variant,value"
    assert {ln.split(",")[1] for ln in lines[3:]} == {"prose", "literal"}


def test_missing_dataset_is_usage_error(tmp_path):
    assert main(["train", "--dataset", str(tmp_path / "none"), "--out", str(tmp_path)]) == 2


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "ddrf", "make-scenes", "--out", str(tmp_path), "--count", "2",
                          "--size", "32", "--seed", "3"], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert len(list(tmp_path.glob("*.png"))) == 4
