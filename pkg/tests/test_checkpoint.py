import struct

import numpy as np
import pytest

from imnseg.checkpoint import (
    MAGIC,
    CheckpointConfigError,
    CheckpointFormatError,
    CheckpointVersionError,
    load_checkpoint,
    save_checkpoint,
)
from imnseg.imagery import gen_synthetic_vessels
from imnseg.networks import ArchitectureConfig, build, predict_logits, train_step
from imnseg.tensor import Adam


@pytest.fixture
def trained():
    net = build(ArchitectureConfig(kind="imn", depth=1, width=4, seed=2))
    img, mask = gen_synthetic_vessels(0, 16, 16)
    opt = Adam(lr=1e-3)
    for _ in range(3):
        train_step(net, opt, img, mask)
    return net


def test_round_trip_is_identity(tmp_path, trained):
    save_checkpoint(trained, tmp_path / "a.ckpt")
    back = load_checkpoint(tmp_path / "a.ckpt", expect=trained.config)
    a, b = trained.state_arrays(), back.state_arrays()
    assert list(a) == list(b)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    img = gen_synthetic_vessels(5, 16, 16)[0]
    assert np.array_equal(predict_logits(trained, img), predict_logits(back, img))


def test_round_trip_resumes_training_identically(tmp_path, trained):
    save_checkpoint(trained, tmp_path / "a.ckpt")
    back = load_checkpoint(tmp_path / "a.ckpt")
    img, mask = gen_synthetic_vessels(1, 16, 16)
    assert train_step(trained, Adam(lr=1e-3), img, mask) == train_step(back, Adam(lr=1e-3), img, mask)
    assert np.array_equal(trained.params["head.weight"].values, back.params["head.weight"].values)


def test_header_layout(tmp_path, trained):
    save_checkpoint(trained, tmp_path / "a.ckpt")
    data = (tmp_path / "a.ckpt").read_bytes()
    assert data[:4] == MAGIC and struct.unpack("<I", data[4:8])[0] == 1
    n = struct.unpack("<I", data[8:12])[0]
    assert b"depth = 1" in data[12:12 + n]


def test_bad_magic(tmp_path, trained):
    save_checkpoint(trained, tmp_path / "a.ckpt")
    raw = bytearray((tmp_path / "a.ckpt").read_bytes())
    raw[0:4] = b"XXXX"
    (tmp_path / "a.ckpt").write_bytes(bytes(raw))
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(tmp_path / "a.ckpt")


def test_bad_version(tmp_path, trained):
    save_checkpoint(trained, tmp_path / "a.ckpt")
    raw = bytearray((tmp_path / "a.ckpt").read_bytes())
    raw[4:8] = struct.pack("<I", 2)
    (tmp_path / "a.ckpt").write_bytes(bytes(raw))
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(tmp_path / "a.ckpt")


def test_truncated(tmp_path, trained):
    save_checkpoint(trained, tmp_path / "a.ckpt")
    raw = (tmp_path / "a.ckpt").read_bytes()
    (tmp_path / "a.ckpt").write_bytes(raw[:-10])
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(tmp_path / "a.ckpt")


def test_config_guard(tmp_path):
    net = build(ArchitectureConfig(kind="imn", depth=2, width=4))
    save_checkpoint(net, tmp_path / "a.ckpt")
    with pytest.raises(CheckpointConfigError, match="depth"):
        load_checkpoint(tmp_path / "a.ckpt", expect=ArchitectureConfig(kind="imn", depth=3, width=4))
