"""Datasets, cropping, the training loop, tiled inference and the
segment-then-skeletonize pipeline."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .classical import ThresholdConfig, adaptive_threshold
from .imagery import gen_synthetic_vessels, load_gray, load_mask, save_gray, save_mask
from .metrics import EvalConfig, Summary, confusion, evaluate_all, overlap_metrics, summarize
from .morphology import zhang_suen_thin
from .networks import ArchitectureConfig, Network, NumericError, TrainConfig, build, predict_proba, train_step
from .rng import SplitMix64
from .tensor import Adam

__all__ = [
    "IMAGE_SUFFIXES",
    "DatasetError",
    "DatasetItem",
    "Dataset",
    "load_dataset",
    "write_synthetic_dataset",
    "split_dataset",
    "sample_crop",
    "TrainRun",
    "train",
    "TileLayout",
    "make_tile_layout",
    "stitch_tiles",
    "infer_full_image",
    "skeleton_pipeline",
    "tune_adaptive_threshold",
]

IMAGE_SUFFIXES = (".png", ".pgm")


class DatasetError(ValueError):
    """Problem with dataset layout or contents."""


@dataclass
class DatasetItem:
    id: str
    image: np.ndarray
    mask: np.ndarray | None = None


@dataclass
class Dataset:
    items: list[DatasetItem]
    source_root: Path | None = None

    def __post_init__(self):
        ids = [it.id for it in self.items]
        if len(set(ids)) != len(ids):
            raise DatasetError("dataset ids must be unique")
        for it in self.items:
            if it.mask is not None and it.mask.shape != it.image.shape:
                raise DatasetError(f"{it.id}: mask dims {it.mask.shape} differ from image dims {it.image.shape}")

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    @property
    def ids(self) -> list[str]:
        return [it.id for it in self.items]

    @property
    def labelled(self) -> bool:
        return all(it.mask is not None for it in self.items)


def _by_stem(folder: Path) -> dict[str, Path]:
    out: dict[str, Path] = {}
    for p in sorted(folder.iterdir()):
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES:
            if p.stem in out:
                raise DatasetError(f"{folder}: two files share the stem {p.stem!r}")
            out[p.stem] = p
    return out


def load_dataset(root) -> Dataset:
    """Read ``root/images/*`` and optional ``root/labels/*`` matched by stem."""
    root = Path(root)
    img_dir, lbl_dir = root / "images", root / "labels"
    if not img_dir.is_dir():
        raise DatasetError(f"dataset root {root} has no images/ directory")
    images = _by_stem(img_dir)
    labels = _by_stem(lbl_dir) if lbl_dir.is_dir() else {}
    orphans = sorted(set(labels) - set(images))
    if orphans:
        raise DatasetError(f"labels without a matching image: {orphans}")
    if not images:
        raise DatasetError(f"dataset at {root} is empty")
    items = []
    for stem in sorted(images):
        img = load_gray(images[stem])
        mask = load_mask(labels[stem]) if stem in labels else None
        if mask is not None and mask.shape != img.shape:
            raise DatasetError(f"{stem}: mask dims {mask.shape} differ from image dims {img.shape}")
        items.append(DatasetItem(stem, img, mask))
    return Dataset(items, root)


def write_synthetic_dataset(root, n: int, seed: int = 0, height: int = 76, width: int = 76, fmt: str = "png") -> Path:
    """Generate ``n`` synthetic image/label pairs in the folder layout above."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    for i in range(n):
        img, mask = gen_synthetic_vessels(seed + i, height, width)
        save_gray(img, root / "images" / f"{i:04d}.{fmt}")
        save_mask(mask, root / "labels" / f"{i:04d}.{fmt}")
    return root


def split_dataset(ds: Dataset, n_train: int, seed: int = 0) -> tuple[Dataset, Dataset]:
    if not 0 < n_train < len(ds):
        raise ValueError(f"n_train must be in (0, {len(ds)}), got {n_train}")
    order = SplitMix64(seed).permutation(len(ds))
    pick = lambda idx: Dataset(sorted((ds.items[i] for i in idx), key=lambda it: it.id), ds.source_root)  # noqa: E731
    return pick(order[:n_train]), pick(order[n_train:])


def sample_crop(item: DatasetItem, crop: int, rng: SplitMix64):
    """Uniformly placed ``crop`` x ``crop`` window of image and mask."""
    h, w = item.image.shape
    if h < crop or w < crop:
        raise DatasetError(f"{item.id}: image {h}x{w} is smaller than crop {crop}")
    oy = int(rng.integers(0, h - crop + 1))
    ox = int(rng.integers(0, w - crop + 1))
    win = (slice(oy, oy + crop), slice(ox, ox + crop))
    mask = None if item.mask is None else item.mask[win]
    return item.image[win], mask


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------

@dataclass
class TrainRun:
    arch: ArchitectureConfig
    train: TrainConfig
    net: Network
    loss_log: list[float] = field(default_factory=list)
    eval_log: list[tuple[int, Summary]] = field(default_factory=list)
    checkpoint_path: Path | None = None
    best_checkpoint_path: Path | None = None
    best_dice: float = -math.inf
    log_path: Path | None = None


def _eval_crops(ds: Dataset, crop: int, seed: int):
    # fixed per run so successive evaluations are comparable
    rng = SplitMix64(seed).spawn(1)
    return [(it.id, *sample_crop(it, crop, rng)) for it in ds]


def _evaluate(net: Network, crops) -> Summary:
    reports = []
    for cid, img, mask in crops:
        reports.append(evaluate_all(predict_proba(net, img) > 0.5, mask, image_id=cid))
    return summarize(reports)


def train(train_ds: Dataset, arch: ArchitectureConfig, cfg: TrainConfig | None = None,
          out_dir=None, eval_ds: Dataset | None = None) -> TrainRun:
    """Random-crop Adam training.

    With ``out_dir`` set, writes ``train_log.jsonl`` (``{"step", "loss"}``
    per step and ``{"step", "metrics"}`` per evaluation), ``final.ckpt`` and,
    when held-out data is evaluated, ``best.ckpt`` (highest mean Dice). A
    non-finite loss stops training: the last good state is saved to
    ``final.ckpt`` and the :class:`NumericError` is re-raised with the run
    attached as ``exc.run``.
    """
    cfg = cfg or TrainConfig()
    if len(train_ds) == 0 or not train_ds.labelled:
        raise DatasetError("training needs a non-empty, fully labelled dataset")
    net = build(arch)
    opt = Adam(lr=cfg.lr)
    rng = SplitMix64(cfg.seed)
    run = TrainRun(arch, cfg, net)
    out = Path(out_dir) if out_dir is not None else None
    log = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        run.log_path = out / "train_log.jsonl"
        log = run.log_path.open("w")
    crops = _eval_crops(eval_ds, cfg.crop, cfg.seed) if eval_ds is not None and len(eval_ds) else None

    def emit(rec):
        if log is not None:
            log.write(json.dumps(rec) + "\n")

    try:
        for step in range(1, cfg.max_steps + 1):
            picks = rng.integers(0, len(train_ds), cfg.batch_size)
            pairs = [sample_crop(train_ds.items[int(i)], cfg.crop, rng) for i in np.atleast_1d(picks)]
            imgs = np.stack([p[0] for p in pairs])
            masks = np.stack([p[1] for p in pairs])
            try:
                loss = train_step(net, opt, imgs, masks)
            except NumericError as exc:
                if out is not None:
                    save_checkpoint(net, out / "final.ckpt")
                    run.checkpoint_path = out / "final.ckpt"
                exc.run = run
                raise
            run.loss_log.append(loss)
            emit({"step": step, "loss": loss})
            if crops and cfg.eval_every and step % cfg.eval_every == 0:
                summary = _evaluate(net, crops)
                run.eval_log.append((step, summary))
                emit({"step": step, "metrics": {k: (None if math.isnan(v) else v) for k, v in summary.means.items()}})
                dice = summary.means["dice"]
                if out is not None and dice > run.best_dice:
                    run.best_dice = dice
                    run.best_checkpoint_path = out / "best.ckpt"
                    save_checkpoint(net, run.best_checkpoint_path)
        if out is not None:
            run.checkpoint_path = out / "final.ckpt"
            save_checkpoint(net, run.checkpoint_path)
    finally:
        if log is not None:
            log.close()
    return run


# --------------------------------------------------------------------------
# Tiled inference
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TileLayout:
    image_h: int
    image_w: int
    tile: int
    stride: int
    origins: tuple[tuple[int, int], ...]

    def windows(self):
        t = self.tile
        for y, x in self.origins:
            yield slice(y, y + t), slice(x, x + t)


def _axis_origins(dim: int, tile: int, stride: int) -> list[int]:
    starts = list(range(0, dim - tile + 1, stride))
    if starts[-1] != dim - tile:
        starts.append(dim - tile)
    return starts


def make_tile_layout(image_h: int, image_w: int, tile: int = 76, stride: int = 56) -> TileLayout:
    if tile < 1 or tile > min(image_h, image_w):
        raise ValueError(f"tile {tile} does not fit a {image_h}x{image_w} image")
    if not 1 <= stride <= tile:
        raise ValueError(f"stride must be in [1, {tile}], got {stride}")
    ys = _axis_origins(image_h, tile, stride)
    xs = _axis_origins(image_w, tile, stride)
    return TileLayout(image_h, image_w, tile, stride, tuple((y, x) for y in ys for x in xs))


def _accumulate(layout: TileLayout, tiles) -> np.ndarray:
    """Average overlapping tiles; ``tiles`` yields (index, array)."""
    total = np.zeros((layout.image_h, layout.image_w), dtype=np.float64)
    count = np.zeros_like(total)
    wins = list(layout.windows())
    for k, arr in tiles:
        total[wins[k]] += arr
        count[wins[k]] += 1.0
    return total / count


def stitch_tiles(tiles, layout: TileLayout) -> np.ndarray:
    """Per-pixel mean of tiles given in ``layout.origins`` order."""
    tiles = list(tiles)
    if len(tiles) != len(layout.origins):
        raise ValueError(f"expected {len(layout.origins)} tiles, got {len(tiles)}")
    return _accumulate(layout, enumerate(tiles))


def infer_full_image(net: Network, img, layout: TileLayout | None = None, *, workers: int = 1,
                     order=None, deterministic: bool = True, return_prob: bool = False):
    """Tile, predict, average class-1 probabilities and threshold at 0.5.

    ``order`` is the sequence in which tiles are submitted (default: origin
    order). In deterministic mode, results are accumulated in origin order
    regardless of submission or completion order, so the output is
    bit-identical across orders and worker counts.
    """
    img = np.asarray(img)
    layout = layout or make_tile_layout(*img.shape)
    if (layout.image_h, layout.image_w) != img.shape:
        raise ValueError(f"layout is for {layout.image_h}x{layout.image_w}, image is {img.shape}")
    wins = list(layout.windows())
    order = list(range(len(wins))) if order is None else [int(k) for k in order]
    if sorted(order) != list(range(len(wins))):
        raise ValueError("order must be a permutation of tile indices")

    def run(k):
        return k, predict_proba(net, img[wins[k]])

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            done = list(pool.map(run, order)) if deterministic else [f.result() for f in [pool.submit(run, k) for k in order]]
    else:
        done = [run(k) for k in order]
    if deterministic:
        done.sort(key=lambda kv: kv[0])
    prob = _accumulate(layout, done)
    mask = prob > 0.5
    return (mask, prob) if return_prob else mask


def skeleton_pipeline(net: Network, img, layout: TileLayout | None = None, **kw) -> np.ndarray:
    """Segment with the network, then thin the mask."""
    return zhang_suen_thin(infer_full_image(net, img, layout, **kw))


def tune_adaptive_threshold(ds: Dataset, sensitivities=None, windows=(None,)):
    """Grid-search Bradley-Roth settings for the best mean Dice on ``ds``.

    Returns ``(ThresholdConfig, mean_dice)``; ties keep the first setting.
    """
    if not ds.labelled:
        raise DatasetError("tuning needs labels")
    sensitivities = np.arange(0.0, 50.0, 1.0) if sensitivities is None else sensitivities
    best, best_dice = None, -math.inf
    for win in windows:
        for t in sensitivities:
            tcfg = ThresholdConfig(window=win, sensitivity=float(t))
            dice = float(np.mean([overlap_metrics(confusion(adaptive_threshold(it.image, tcfg), it.mask))[0] for it in ds]))
            if dice > best_dice:
                best, best_dice = tcfg, dice
    return best, best_dice


def evaluate_dataset(preds: dict[str, np.ndarray], ds: Dataset, cfg: EvalConfig | None = None):
    reports = [evaluate_all(preds[it.id], it.mask, cfg, it.id) for it in ds]
    return reports, summarize(reports)
