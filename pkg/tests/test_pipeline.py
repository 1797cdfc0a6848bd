import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imnseg.checkpoint import load_checkpoint
from imnseg.imagery import gen_synthetic_vessels, save_gray, save_mask, to_bytes
from imnseg.networks import ArchitectureConfig, NumericError, TrainConfig, build, predict_proba
from imnseg.pipeline import (
    Dataset,
    DatasetError,
    DatasetItem,
    infer_full_image,
    load_dataset,
    make_tile_layout,
    sample_crop,
    skeleton_pipeline,
    split_dataset,
    stitch_tiles,
    train,
    tune_adaptive_threshold,
    write_synthetic_dataset,
)
from imnseg.rng import SplitMix64

SMALL = ArchitectureConfig(kind="imn", depth=1, width=4, seed=1)


def _synthetic_ds(n, size=20):
    return Dataset([DatasetItem(f"{i:02d}", *gen_synthetic_vessels(i, size, size)) for i in range(n)])


# ---- datasets -------------------------------------------------------------------

def test_load_sorted(tmp_path):
    for stem in ("c", "a", "b"):
        img, mask = gen_synthetic_vessels(ord(stem), 16, 16)
        (tmp_path / "images").mkdir(exist_ok=True)
        (tmp_path / "labels").mkdir(exist_ok=True)
        save_gray(img, tmp_path / "images" / f"{stem}.png")
        save_mask(mask, tmp_path / "labels" / f"{stem}.pgm")
    ds = load_dataset(tmp_path)
    assert ds.ids == ["a", "b", "c"] and ds.labelled


def test_dimension_mismatch_names_item(tmp_path):
    write_synthetic_dataset(tmp_path, 2, height=16, width=16)
    save_mask(np.zeros((17, 16), bool), tmp_path / "labels" / "0001.png")
    with pytest.raises(DatasetError, match="0001"):
        load_dataset(tmp_path)


def test_orphan_label_and_empty(tmp_path):
    write_synthetic_dataset(tmp_path, 1, height=16, width=16)
    save_mask(np.zeros((16, 16), bool), tmp_path / "labels" / "zzz.png")
    with pytest.raises(DatasetError, match="zzz"):
        load_dataset(tmp_path)
    (tmp_path / "e" / "images").mkdir(parents=True)
    with pytest.raises(DatasetError, match="empty"):
        load_dataset(tmp_path / "e")
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "missing")


def test_unlabelled_images_allowed(tmp_path):
    write_synthetic_dataset(tmp_path, 2, height=16, width=16)
    (tmp_path / "labels" / "0000.png").unlink()
    ds = load_dataset(tmp_path)
    assert ds.items[0].mask is None and ds.items[1].mask is not None and not ds.labelled


def test_octa_ss_sized_split(tmp_path):
    ds = load_dataset(write_synthetic_dataset(tmp_path, 55, height=16, width=16))
    train_ds, test_ds = split_dataset(ds, 30, seed=0)
    assert len(train_ds) == 30 and len(test_ds) == 25
    assert set(train_ds.ids) | set(test_ds.ids) == set(ds.ids)
    assert not set(train_ds.ids) & set(test_ds.ids)


def test_split_rules():
    ds = _synthetic_ds(6, 16)
    a, b = split_dataset(ds, 5, seed=3)
    assert len(b) == 1
    assert split_dataset(ds, 3, 9)[0].ids == split_dataset(ds, 3, 9)[0].ids
    for bad in (0, 6):
        with pytest.raises(ValueError):
            split_dataset(ds, bad)


# ---- crops ------------------------------------------------------------------------

def test_crop_identity_and_too_small():
    img, mask = gen_synthetic_vessels(0)
    item = DatasetItem("x", img, mask)
    ci, cm = sample_crop(item, 76, SplitMix64(0))
    assert np.array_equal(ci, img) and np.array_equal(cm, mask)
    with pytest.raises(DatasetError):
        sample_crop(item, 77, SplitMix64(0))


def test_crop_offsets_cover_all():
    img = np.arange(80 * 80, dtype=float).reshape(80, 80) / 6400
    item = DatasetItem("x", img, img > 0.5)
    rng = SplitMix64(1)
    hits = set()
    for _ in range(10_000):
        ci, cm = sample_crop(item, 76, rng)
        oy, ox = divmod(int(round(ci[0, 0] * 6400)), 80)
        assert np.array_equal(cm, item.mask[oy:oy + 76, ox:ox + 76])
        hits.add((oy, ox))
    assert len(hits) == 25


# ---- training ---------------------------------------------------------------------

def test_zero_steps_checkpoint_is_init(tmp_path):
    run = train(_synthetic_ds(2), SMALL, TrainConfig(max_steps=0, crop=16), tmp_path)
    back, init = load_checkpoint(run.checkpoint_path).state_arrays(), build(SMALL).state_arrays()
    assert all(np.array_equal(back[k], init[k]) for k in init)
    assert run.loss_log == []


def test_training_log_and_best_checkpoint(tmp_path):
    ds = _synthetic_ds(4)
    run = train(ds, SMALL, TrainConfig(lr=1e-3, max_steps=6, crop=16, eval_every=3), tmp_path, eval_ds=_synthetic_ds(2))
    recs = [json.loads(s) for s in (tmp_path / "train_log.jsonl").read_text().splitlines()]
    assert [r["step"] for r in recs if "loss" in r] == list(range(1, 7))
    assert [r["step"] for r in recs if "metrics" in r] == [3, 6]
    assert [r["loss"] for r in recs if "loss" in r] == run.loss_log
    assert run.best_checkpoint_path.exists() and run.checkpoint_path.exists()
    assert all(np.isfinite(run.loss_log))


def test_training_bit_deterministic(tmp_path):
    ds = _synthetic_ds(3)
    cfg = TrainConfig(lr=1e-3, max_steps=4, crop=16, seed=5, batch_size=2)
    a = train(ds, SMALL, cfg, tmp_path / "a")
    b = train(ds, SMALL, cfg, tmp_path / "b")
    assert a.loss_log == b.loss_log
    assert a.checkpoint_path.read_bytes() == b.checkpoint_path.read_bytes()
    c = train(ds, SMALL, TrainConfig(lr=1e-3, max_steps=4, crop=16, seed=6, batch_size=2))
    assert c.loss_log != a.loss_log


def test_non_finite_loss_keeps_checkpoint(tmp_path):
    ds = Dataset([DatasetItem("nan", np.full((8, 8), np.nan), np.zeros((8, 8), bool))])
    with pytest.raises(NumericError) as info:
        train(ds, SMALL, TrainConfig(max_steps=3, crop=8), tmp_path)
    assert (tmp_path / "final.ckpt").exists() and info.value.run.loss_log == []


def test_training_needs_labels():
    with pytest.raises(DatasetError):
        train(Dataset([DatasetItem("u", np.zeros((8, 8)))]), SMALL, TrainConfig(max_steps=1, crop=8))


# ---- tiling --------------------------------------------------------------------------

def test_layout_examples():
    assert make_tile_layout(152, 152, 76, 76).origins == ((0, 0), (0, 76), (76, 0), (76, 76))
    assert make_tile_layout(76, 76).origins == ((0, 0),)
    assert make_tile_layout(100, 100, 76, 56).origins == ((0, 0), (0, 24), (24, 0), (24, 24))
    with pytest.raises(ValueError):
        make_tile_layout(50, 100)
    with pytest.raises(ValueError):
        make_tile_layout(100, 100, 76, 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40), st.data())
def test_layout_covers_inside(h, w, data):
    tile = data.draw(st.integers(1, min(h, w)))
    stride = data.draw(st.integers(1, tile))
    lay = make_tile_layout(h, w, tile, stride)
    cover = np.zeros((h, w), int)
    for win in lay.windows():
        cover[win] += 1
    assert cover.min() >= 1
    assert all(0 <= y <= h - tile and 0 <= x <= w - tile for y, x in lay.origins)
    assert len(set(lay.origins)) == len(lay.origins)


def test_stitch_identity_bytes():
    img, _ = gen_synthetic_vessels(3, 100, 130)
    lay = make_tile_layout(100, 130, 40, 25)
    out = stitch_tiles([img[w] for w in lay.windows()], lay)
    assert np.array_equal(to_bytes(out), to_bytes(img))


def _constant_net(p1):
    net = build(ArchitectureConfig(kind="cnn7", width=2))
    for p in net.params.values():
        p.tensor.values[...] = 0
    net.params["head.bias"].tensor.values[:] = [0.0, np.log(p1 / (1 - p1))]
    return net


def test_constant_net_constant_map():
    net = _constant_net(0.7)
    mask, prob = infer_full_image(net, np.random.default_rng(0).random((90, 90)), make_tile_layout(90, 90, 40, 30), return_prob=True)
    assert np.allclose(prob, 0.7, atol=1e-6) and mask.all()


@pytest.fixture(scope="module")
def small_trained():
    return train(_synthetic_ds(4, 40), SMALL, TrainConfig(lr=3e-3, max_steps=40, crop=40)).net


def test_tile_order_invariance(small_trained):
    img, _ = gen_synthetic_vessels(11, 64, 64)
    lay = make_tile_layout(64, 64, 24, 16)
    ref_mask, ref_prob = infer_full_image(small_trained, img, lay, return_prob=True)
    perm = np.random.default_rng(0).permutation(len(lay.origins))
    for kw in ({"order": perm}, {"order": perm[::-1], "workers": 3}):
        mask, prob = infer_full_image(small_trained, img, lay, return_prob=True, **kw)
        assert np.array_equal(prob, ref_prob) and np.array_equal(mask, ref_mask)
    loose = infer_full_image(small_trained, img, lay, order=perm, workers=3, deterministic=False, return_prob=True)[1]
    assert np.allclose(loose, ref_prob, atol=1e-12)


def test_single_tile_equals_direct(small_trained):
    img, _ = gen_synthetic_vessels(12, 40, 40)
    mask, prob = infer_full_image(small_trained, img, make_tile_layout(40, 40, 40, 40), return_prob=True)
    assert np.array_equal(prob, predict_proba(small_trained, img))


def test_skeleton_pipeline(small_trained):
    img, _ = gen_synthetic_vessels(13, 64, 64)
    lay = make_tile_layout(64, 64, 32, 24)
    sk = skeleton_pipeline(small_trained, img, lay)
    assert not (sk & ~infer_full_image(small_trained, img, lay)).any()
    assert not skeleton_pipeline(_constant_net(0.2), img, lay).any()


def test_tune_adaptive_threshold():
    ds = _synthetic_ds(3, 40)
    tcfg, dice = tune_adaptive_threshold(ds, sensitivities=[0.0, 10.0, 20.0])
    assert tcfg.sensitivity in (0.0, 10.0, 20.0) and 0 < dice <= 1
