import subprocess
import sys

import numpy as np
import pytest

from imnseg.checkpoint import load_checkpoint
from imnseg.cli import main
from imnseg.imagery import load_gray, load_mask, save_gray, save_mask
from imnseg.morphology import zhang_suen_thin
from imnseg.networks import ArchitectureConfig, build
from imnseg.pipeline import write_synthetic_dataset


@pytest.fixture
def data(tmp_path):
    return write_synthetic_dataset(tmp_path / "ds", 3, fmt="pgm")


@pytest.fixture
def ckpt(tmp_path, data):
    out = tmp_path / "run"
    assert main(["train", "--data", str(data), "--depth", "1", "--width", "4", "--steps", "2", "--out-dir", str(out)]) == 0
    return out / "final.ckpt"


def test_version(capsys):
    assert main(["version"]) == 0
    assert "imnseg" in capsys.readouterr().out


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "imnseg", "version"], capture_output=True, text=True)
    assert res.returncode == 0 and "imnseg" in res.stdout


def test_train_outputs(tmp_path, ckpt, capsys):
    run = ckpt.parent
    assert (run / "train_log.jsonl").exists() and (run / "config.toml").exists()
    assert load_checkpoint(ckpt).config == ArchitectureConfig(kind="imn", depth=1, width=4, seed=0)


def test_train_missing_root(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "nowhere"), "--out-dir", str(tmp_path)]) == 3
    assert "nowhere" in capsys.readouterr().err


def test_train_zero_steps_is_init(tmp_path, data):
    out = tmp_path / "z"
    assert main(["train", "--data", str(data), "--depth", "1", "--width", "4", "--steps", "0", "--seed", "7", "--out-dir", str(out)]) == 0
    init = build(ArchitectureConfig(kind="imn", depth=1, width=4, seed=7)).state_arrays()
    back = load_checkpoint(out / "final.ckpt").state_arrays()
    assert all(np.array_equal(init[k], back[k]) for k in init)


def test_effective_config_replays(tmp_path, data, capsys):
    args = ["train", "--data", str(data), "--depth", "1", "--width", "4", "--steps", "2", "--seed", "3"]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    printed = capsys.readouterr().err
    assert "seed = 3" in printed and "width = 4" in printed
    assert main(["train", "--config", str(tmp_path / "a" / "config.toml"), "--out-dir", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "final.ckpt").read_bytes() == (tmp_path / "b" / "final.ckpt").read_bytes()


def test_flags_override_file(tmp_path, data, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text(f'[train]\ndata = "{data}"\nwidth = 4\ndepth = 1\nsteps = 1\nseed = 2\n')
    assert main(["train", "--config", str(cfg), "--seed", "9", "--out-dir", str(tmp_path / "o")]) == 0
    assert "seed = 9" in capsys.readouterr().err


def test_bad_config_exit_2(tmp_path, data):
    cfg = tmp_path / "c.toml"
    cfg.write_text("colour = 3\n")
    assert main(["train", "--config", str(cfg), "--data", str(data)]) == 2
    cfg.write_text("not toml [")
    assert main(["train", "--config", str(cfg)]) == 2
    assert main(["train", "--data", str(data), "--width", "0", "--out-dir", str(tmp_path / "w")]) == 2


def test_predict_batch(tmp_path, data, ckpt):
    out = tmp_path / "pred"
    assert main(["predict", str(data / "images"), "--checkpoint", str(ckpt), "--out-dir", str(out), "--prob"]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["0000.mask.pgm", "0000.prob.pgm", "0001.mask.pgm", "0001.prob.pgm", "0002.mask.pgm", "0002.prob.pgm"]
    assert load_mask(out / "0000.mask.pgm").shape == (76, 76)


def test_predict_bad_checkpoint_version(tmp_path, data, ckpt):
    raw = bytearray(ckpt.read_bytes())
    raw[4] = 9
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(bytes(raw))
    assert main(["predict", str(data / "images" / "0000.pgm"), "--checkpoint", str(bad), "--out-dir", str(tmp_path)]) == 2


def test_predict_missing_input(tmp_path, ckpt):
    assert main(["predict", str(tmp_path / "none.png"), "--checkpoint", str(ckpt)]) == 3


def test_evaluate_self(data, capsys):
    assert main(["evaluate", "--pred", str(data / "labels"), "--gt", str(data / "labels")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "image_id,dice,acc,rec,pre,c,a,l,cal,s_rec"
    assert lines[-1] == "mean," + ",".join(["1.0"] * 9)


def test_evaluate_predictions_dir(tmp_path, data, ckpt, capsys):
    out = tmp_path / "pred"
    main(["predict", str(data / "images"), "--checkpoint", str(ckpt), "--out-dir", str(out), "--prob"])
    capsys.readouterr()
    assert main(["evaluate", "--pred", str(out), "--gt", str(data / "labels"), "--format", "jsonl"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 4


def test_evaluate_unmatched_and_corrupt(tmp_path, data):
    other = tmp_path / "other"
    other.mkdir()
    save_mask(np.zeros((76, 76), bool), other / "0000.pgm")
    assert main(["evaluate", "--pred", str(other), "--gt", str(data / "labels")]) == 3
    broken = tmp_path / "broken"
    broken.mkdir()
    for p in (data / "labels").iterdir():
        (broken / p.name).write_bytes(p.read_bytes())
    (broken / "0001.pgm").write_bytes(b"P5 garbage")
    assert main(["evaluate", "--pred", str(broken), "--gt", str(data / "labels")]) == 3


def test_filter_methods(tmp_path, data):
    const = tmp_path / "const.pgm"
    save_gray(np.full((20, 20), 0.4), const)
    assert main(["filter", str(const), "--method", "at", "--out-dir", str(tmp_path / "f")]) == 0
    assert load_mask(tmp_path / "f" / "const.mask.pgm").all()
    assert main(["filter", str(data / "images" / "0000.pgm"), "--method", "frangi", "--out-dir", str(tmp_path / "g")]) == 0
    assert (tmp_path / "g" / "0000.response.pgm").exists() and (tmp_path / "g" / "0000.mask.pgm").exists()


def test_filter_rejections(tmp_path, data, capsys):
    img = str(data / "images" / "0000.pgm")
    assert main(["filter", img, "--method", "scird-ts"]) == 2
    assert "unsupported filter" in capsys.readouterr().err
    assert main(["filter", img, "--method", "sobel"]) == 2
    err = capsys.readouterr().err
    assert "at, frangi, gabor" in err


def test_skeletonize_modes(tmp_path, data, ckpt):
    out = tmp_path / "s"
    assert main(["skeletonize", str(data / "labels"), "--out-dir", str(out)]) == 0
    first = (out / "0000.skel.pgm").read_bytes()
    assert main(["skeletonize", str(out / "0000.skel.pgm"), "--out-dir", str(tmp_path / "s2")]) == 0
    assert (tmp_path / "s2" / "0000.skel.pgm").read_bytes() == first
    assert main(["skeletonize", str(data / "images"), "--checkpoint", str(ckpt), "--out-dir", str(tmp_path / "p")]) == 0
    sk = load_mask(tmp_path / "p" / "0001.skel.pgm")
    assert np.array_equal(zhang_suen_thin(sk), sk)


def test_skeletonize_empty(tmp_path):
    empty = tmp_path / "e.pgm"
    save_mask(np.zeros((10, 10), bool), empty)
    assert main(["skeletonize", str(empty), "--out-dir", str(tmp_path)]) == 0
    assert not load_mask(tmp_path / "e.skel.pgm").any()
    assert load_gray(tmp_path / "e.skel.pgm").shape == (10, 10)



def test_train_nan_loss_exit_4(tmp_path, data, capsys, monkeypatch):
    import imnseg.networks as networks

    real, calls = networks.softmax_cross_entropy, []

    def poisoned(logits, target):
        calls.append(1)
        loss = real(logits, target)
        if len(calls) >= 3:
            loss.values = loss.values * np.nan
        return loss

    monkeypatch.setattr(networks, "softmax_cross_entropy", poisoned)
    out = tmp_path / "boom"
    code = main(["train", "--data", str(data), "--depth", "1", "--width", "4", "--steps", "10", "--out-dir", str(out)])
    assert code == 4
    assert "non-finite loss" in capsys.readouterr().err
    assert load_checkpoint(out / "final.ckpt").params["head.weight"].step_count == 2
