"""Command-line frontend.

Every command resolves its settings as defaults < ``--config`` TOML file <
flags, prints the effective config (as TOML, to stderr) and exits with

* 0 on success,
* 2 for configuration errors,
* 3 for data errors (missing or unreadable inputs, unmatched stems),
* 4 when training hits a non-finite loss.

Config files use the flag names as keys, with ``-`` or ``_``; either a flat
table or a table named after the command (``[train]``) is accepted.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import tomli_w

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .checkpoint import CheckpointConfigError, CheckpointFormatError, CheckpointNameError, CheckpointVersionError, load_checkpoint
from .classical import DECLARED_UNSUPPORTED, FILTERS, FrangiConfig, GaborConfig, ThresholdConfig, filter_response, filter_then_threshold, normalize_response
from .imagery import ImageIOError, load_gray, load_mask, save_gray, save_mask
from .metrics import EvalConfig, MetricsReport, evaluate_all, reports_to_csv, reports_to_jsonl, summarize
from .morphology import zhang_suen_thin
from .networks import ArchitectureConfig, NumericError, TrainConfig
from .pipeline import IMAGE_SUFFIXES, DatasetError, infer_full_image, load_dataset, make_tile_layout, split_dataset, train

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

OUTPUT_TAGS = (".mask", ".prob", ".skel", ".response")


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


SHARED = {"seed": 0, "deterministic": False, "out_dir": "."}

DEFAULTS = {
    "train": {"data": None, "arch": "imn", "depth": 2, "width": 256, "steps": 1000, "lr": 1e-4,
              "batch_size": 1, "crop": 76, "eval_every": 0, "n_train": 0},
    "predict": {"checkpoint": None, "inputs": [], "tile": 76, "stride": 56, "prob": False, "workers": 1},
    "evaluate": {"pred": None, "gt": None, "cal_radius": 2.0, "srec_tol": 0, "format": "csv"},
    "filter": {"inputs": [], "method": "at", "window": 0, "sensitivity": 15.0,
               "scales": list(FrangiConfig().scales), "beta": FrangiConfig().beta, "frangi_c": 0.0,
               "wavelengths": list(GaborConfig().wavelengths), "orientations": GaborConfig().orientations,
               "sigma_ratio": GaborConfig().sigma_ratio},
    "skeletonize": {"inputs": [], "checkpoint": "", "tile": 76, "stride": 56, "workers": 1},
    "version": {},
}


def _parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    shared = argparse.ArgumentParser(add_help=False, argument_default=S)
    shared.add_argument("--config", help="TOML file with settings (flags win)")
    shared.add_argument("--seed", type=int)
    shared.add_argument("--deterministic", action="store_true", help="serial, order-fixed accumulation")
    shared.add_argument("--out-dir")

    ap = argparse.ArgumentParser(prog="imnseg", description="OCTA vessel segmentation toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[shared], argument_default=S, help="train a network")
    p.add_argument("--data", help="dataset root with images/ and labels/")
    p.add_argument("--arch", choices=("imn", "unet", "cnn7"))
    p.add_argument("--depth", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--crop", type=int)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--n-train", type=int, help="hold out the rest for evaluation (0: train on all)")

    p = sub.add_parser("predict", parents=[shared], argument_default=S, help="tiled inference")
    p.add_argument("inputs", nargs="*")
    p.add_argument("--checkpoint")
    p.add_argument("--tile", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--prob", action="store_true", help="also write the probability map")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("evaluate", parents=[shared], argument_default=S, help="score predicted masks")
    p.add_argument("--pred")
    p.add_argument("--gt")
    p.add_argument("--cal-radius", type=float)
    p.add_argument("--srec-tol", type=int)
    p.add_argument("--format", choices=("csv", "jsonl"))

    p = sub.add_parser("filter", parents=[shared], argument_default=S, help="classical baselines")
    p.add_argument("inputs", nargs="*")
    p.add_argument("--method")
    p.add_argument("--window", type=int, help="AT window (0: width/8)")
    p.add_argument("--sensitivity", type=float)
    p.add_argument("--scales", type=float, nargs="+")
    p.add_argument("--beta", type=float)
    p.add_argument("--frangi-c", type=float, help="Frangi c (0: automatic)")
    p.add_argument("--wavelengths", type=float, nargs="+")
    p.add_argument("--orientations", type=int)
    p.add_argument("--sigma-ratio", type=float)

    p = sub.add_parser("skeletonize", parents=[shared], argument_default=S, help="thin masks, or segment then thin")
    p.add_argument("inputs", nargs="*")
    p.add_argument("--checkpoint", help="segment images with this network first")
    p.add_argument("--tile", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--workers", type=int)

    sub.add_parser("version", help="print the version")
    return ap


def resolve(command: str, flags: dict) -> dict:
    """Merge defaults, the optional config file and explicit flags."""
    allowed = {**SHARED, **DEFAULTS[command]}
    eff = dict(allowed)
    cfg_path = flags.pop("config", None)
    if cfg_path:
        try:
            with open(cfg_path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {cfg_path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {cfg_path}: {exc}") from exc
        if isinstance(data.get(command), dict):
            data = {**{k: v for k, v in data.items() if not isinstance(v, dict)}, **data[command]}
        for key, value in data.items():
            if isinstance(value, dict):
                continue
            norm = key.replace("-", "_")
            if norm not in allowed:
                raise ConfigError(f"unknown key {key!r} in {cfg_path} for '{command}'")
            eff[norm] = value
    eff.update(flags)
    return eff


def _dump(eff: dict) -> str:
    return tomli_w.dumps({k: v for k, v in eff.items() if v is not None})


def _stem(path: Path) -> str:
    stem = path.stem
    for tag in OUTPUT_TAGS:
        if stem.endswith(tag):
            return stem[: -len(tag)]
    return stem


def _inputs(paths) -> list[Path]:
    if not paths:
        raise ConfigError("no input files given")
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(q for q in p.iterdir() if q.suffix.lower() in IMAGE_SUFFIXES))
        elif not p.exists():
            raise DataError(f"input not found: {p}")
        else:
            out.append(p)
    return out


def _out_dir(eff) -> Path:
    out = Path(eff["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_net(path):
    if not path:
        raise ConfigError("--checkpoint is required")
    if not Path(path).exists():
        raise DataError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def _layout(img, eff):
    h, w = img.shape
    tile = min(eff["tile"], h, w)
    return make_tile_layout(h, w, tile, min(eff["stride"], tile))


def _segment(net, img, eff):
    workers = 1 if eff["deterministic"] else eff["workers"]
    return infer_full_image(net, img, _layout(img, eff), workers=workers, deterministic=True, return_prob=True)


def cmd_train(eff) -> int:
    root = eff["data"]
    if not root:
        raise ConfigError("--data is required")
    if not Path(root).is_dir():
        raise DataError(f"dataset root not found: {root}")
    arch = ArchitectureConfig(kind=eff["arch"], depth=eff["depth"], width=eff["width"], seed=eff["seed"])
    tcfg = TrainConfig(lr=eff["lr"], batch_size=eff["batch_size"], max_steps=eff["steps"], crop=eff["crop"],
                       seed=eff["seed"], eval_every=eff["eval_every"])
    ds = load_dataset(root)
    held = None
    if eff["n_train"]:
        ds, held = split_dataset(ds, eff["n_train"], eff["seed"])
    out = _out_dir(eff)
    (out / "config.toml").write_text(_dump(eff))
    run = train(ds, arch, tcfg, out, held)
    print(f"trained {len(run.loss_log)} steps; checkpoint {run.checkpoint_path}")
    if run.best_checkpoint_path:
        print(f"best held-out dice {run.best_dice:.4f}: {run.best_checkpoint_path}")
    return EXIT_OK


def cmd_predict(eff) -> int:
    net = _load_net(eff["checkpoint"])
    out = _out_dir(eff)
    for path in _inputs(eff["inputs"]):
        img = load_gray(path)
        mask, prob = _segment(net, img, eff)
        save_mask(mask, out / f"{_stem(path)}.mask.pgm")
        if eff["prob"]:
            save_gray(prob, out / f"{_stem(path)}.prob.pgm")
        print(f"{path} -> {out / (_stem(path) + '.mask.pgm')}")
    return EXIT_OK


def _mask_files(folder) -> dict[str, Path]:
    folder = Path(folder)
    if not folder.is_dir():
        raise DataError(f"directory not found: {folder}")
    files = {}
    for p in sorted(folder.iterdir()):
        if p.suffix.lower() in IMAGE_SUFFIXES and not p.stem.endswith((".prob", ".response")):
            files[_stem(p)] = p
    return files


def cmd_evaluate(eff) -> int:
    if not eff["pred"] or not eff["gt"]:
        raise ConfigError("--pred and --gt are required")
    preds, gts = _mask_files(eff["pred"]), _mask_files(eff["gt"])
    if set(preds) != set(gts):
        missing = sorted(set(preds) ^ set(gts))
        raise DataError(f"unmatched stems between prediction and ground truth: {missing}")
    if not preds:
        raise DataError("no masks to evaluate")
    ecfg = EvalConfig(cal_radius=eff["cal_radius"], srec_tolerance=eff["srec_tol"])
    reports, failed = [], False
    for stem in sorted(preds):
        try:
            reports.append(evaluate_all(load_mask(preds[stem]), load_mask(gts[stem]), ecfg, stem))
        except (ImageIOError, ValueError) as exc:
            reports.append(MetricsReport(stem, error=str(exc)))
            failed = True
    summary = summarize(reports)
    text = (reports_to_csv if eff["format"] == "csv" else reports_to_jsonl)(reports, summary)
    sys.stdout.write(text)
    if eff["out_dir"] != ".":
        (_out_dir(eff) / f"metrics.{eff['format']}").write_text(text)
    for stem, err in summary.errors.items():
        print(f"{stem}: {err}", file=sys.stderr)
    return EXIT_DATA if failed else EXIT_OK


def cmd_filter(eff) -> int:
    method = str(eff["method"]).lower()
    if method not in FILTERS:
        reason = "unsupported filter (not implemented)" if method in DECLARED_UNSUPPORTED else "unknown filter"
        raise ConfigError(f"{reason} {method!r}; available methods: {', '.join(FILTERS)}")
    tcfg = ThresholdConfig(window=eff["window"] or None, sensitivity=eff["sensitivity"])
    fcfg = None
    if method == "frangi":
        fcfg = FrangiConfig(scales=tuple(eff["scales"]), beta=eff["beta"], c=eff["frangi_c"] or None)
    elif method == "gabor":
        fcfg = GaborConfig(wavelengths=tuple(eff["wavelengths"]), orientations=eff["orientations"],
                           sigma_ratio=eff["sigma_ratio"])
    out = _out_dir(eff)
    for path in _inputs(eff["inputs"]):
        img = load_gray(path)
        resp = filter_response(img, method, fcfg)
        mask = filter_then_threshold(img, method, fcfg, tcfg)
        save_gray(resp if method == "at" else normalize_response(resp), out / f"{_stem(path)}.response.pgm")
        save_mask(mask, out / f"{_stem(path)}.mask.pgm")
        print(f"{path} -> {out / (_stem(path) + '.mask.pgm')}")
    return EXIT_OK


def cmd_skeletonize(eff) -> int:
    net = _load_net(eff["checkpoint"]) if eff["checkpoint"] else None
    out = _out_dir(eff)
    for path in _inputs(eff["inputs"]):
        mask = load_mask(path) if net is None else _segment(net, load_gray(path), eff)[0]
        save_mask(zhang_suen_thin(mask), out / f"{_stem(path)}.skel.pgm")
        print(f"{path} -> {out / (_stem(path) + '.skel.pgm')}")
    return EXIT_OK


def cmd_version(eff) -> int:
    print(f"imnseg {__version__}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "predict": cmd_predict, "evaluate": cmd_evaluate,
            "filter": cmd_filter, "skeletonize": cmd_skeletonize, "version": cmd_version}


def main(argv=None) -> int:
    args = vars(_parser().parse_args(argv))
    command = args.pop("command")
    try:
        eff = resolve(command, args)
        if command != "version":
            print(f"# effective config ({command})\n{_dump(eff)}", file=sys.stderr, end="")
        return COMMANDS[command](eff)
    except (ConfigError, CheckpointVersionError, CheckpointConfigError, CheckpointNameError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DatasetError, ImageIOError, CheckpointFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, TypeError, KeyError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
