import numpy as np
import pytest
from PIL import Image

from imnseg.imagery import (
    CorruptHeaderError,
    MissingFileError,
    SynthConfig,
    UnsupportedBitDepthError,
    UnsupportedChannelsError,
    gen_synthetic_vessels,
    is_thin,
    load_gray,
    load_mask,
    save_gray,
    save_mask,
    to_bytes,
)


def _pgm(path, arr):
    arr = np.asarray(arr, dtype=np.uint8)
    path.write_bytes(b"P5\n%d %d\n255\n" % (arr.shape[1], arr.shape[0]) + arr.tobytes())
    return path


def test_load_gray_scaling(tmp_path):
    img = load_gray(_pgm(tmp_path / "a.pgm", [[0, 255], [128, 64]]))
    assert img.tolist() == [[0.0, 1.0], [128 / 255, 64 / 255]]


def test_load_mask_threshold(tmp_path):
    mask = load_mask(_pgm(tmp_path / "m.pgm", [[0, 255], [127, 128]]))
    assert mask.tolist() == [[False, True], [False, True]]
    assert not load_mask(_pgm(tmp_path / "z.pgm", np.zeros((3, 3)))).any()


def test_round_half_up():
    assert to_bytes(np.array([[0.5]]))[0, 0] == 128
    assert to_bytes(np.array([[1.0, 0.0]])).tolist() == [[255, 0]]


@pytest.mark.parametrize("suffix", [".pgm", ".png"])
def test_gray_round_trip_bytes(tmp_path, suffix):
    raw = np.arange(256, dtype=np.uint8).reshape(16, 16)
    src = tmp_path / f"src{suffix}"
    Image.fromarray(raw, mode="L").save(src) if suffix == ".png" else _pgm(src, raw)
    out = tmp_path / f"out{suffix}"
    save_gray(load_gray(src), out)
    assert np.array_equal(to_bytes(load_gray(out)), raw)


@pytest.mark.parametrize("suffix", [".pgm", ".png"])
def test_mask_round_trip(tmp_path, suffix):
    m = np.random.default_rng(0).random((9, 13)) > 0.5
    save_mask(m, tmp_path / f"m{suffix}")
    assert np.array_equal(load_mask(tmp_path / f"m{suffix}"), m)
    assert set(np.unique(to_bytes(load_gray(tmp_path / f"m{suffix}")))) <= {0, 255}


def test_rgb_png_rejected(tmp_path):
    Image.new("RGB", (4, 4)).save(tmp_path / "c.png")
    with pytest.raises(UnsupportedChannelsError, match="channel"):
        load_gray(tmp_path / "c.png")


def test_sixteen_bit_rejected(tmp_path):
    p = tmp_path / "d.pgm"
    p.write_bytes(b"P5 2 2 65535\n" + bytes(8))
    with pytest.raises(UnsupportedBitDepthError):
        load_gray(p)


def test_missing_and_corrupt(tmp_path):
    with pytest.raises(MissingFileError):
        load_gray(tmp_path / "nope.pgm")
    (tmp_path / "bad.pgm").write_bytes(b"P5 4 4 255\n" + bytes(3))
    with pytest.raises(CorruptHeaderError):
        load_gray(tmp_path / "bad.pgm")
    (tmp_path / "junk.pgm").write_bytes(b"hello")
    with pytest.raises(CorruptHeaderError):
        load_gray(tmp_path / "junk.pgm")


def test_is_thin():
    assert is_thin(np.eye(4, dtype=bool))
    assert not is_thin(np.ones((2, 2), dtype=bool))


def test_synthetic_deterministic():
    a, b = gen_synthetic_vessels(4), gen_synthetic_vessels(4)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert not np.array_equal(a[1], gen_synthetic_vessels(5)[1])


def test_synthetic_fraction_and_range():
    for seed in range(1, 30):
        img, mask = gen_synthetic_vessels(seed)
        assert img.shape == mask.shape == (76, 76)
        assert 0.05 <= mask.mean() <= 0.45
        assert img.min() >= 0 and img.max() <= 1


def test_synthetic_vessels_brighter_than_background():
    img, mask = gen_synthetic_vessels(2)
    assert img[mask].mean() > img[~mask].mean() + 0.2


def test_trunk_only_widths():
    cfg = SynthConfig(n_capillaries=0, min_fraction=0.0)
    _, mask = gen_synthetic_vessels(3, cfg=cfg)
    assert mask.any()
    # every vessel pixel belongs to some 2x2 all-set block: no 1-px strands
    blk = mask[:-1, :-1] & mask[1:, :-1] & mask[:-1, 1:] & mask[1:, 1:]
    covered = np.zeros_like(mask)
    for dy in (0, 1):
        for dx in (0, 1):
            covered[dy:dy + blk.shape[0], dx:dx + blk.shape[1]] |= blk
    assert np.array_equal(covered, mask)
