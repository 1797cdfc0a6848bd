"""Segmentation metrics: overlap scores, CAL and skeleton recall.

Degenerate denominators: when both masks are empty every overlap score is 1
(nothing to find, nothing wrongly found). Any other zero denominator gives
``nan`` as the undefined marker, and dataset summaries report how many
entries were undefined instead of dropping them silently.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .morphology import count_components, dilate_disc, zhang_suen_thin

__all__ = [
    "FIELDS",
    "ConfusionCounts",
    "MetricsReport",
    "EvalConfig",
    "EmptyGroundTruthError",
    "confusion",
    "overlap_metrics",
    "cal_score",
    "skeleton_recall",
    "evaluate_all",
    "summarize",
    "reports_to_csv",
    "reports_to_jsonl",
]

FIELDS = ("dice", "acc", "rec", "pre", "c", "a", "l", "cal", "s_rec")

UNDEFINED = float("nan")


class EmptyGroundTruthError(ValueError):
    """CAL / S-Rec normalisers vanish for an empty ground truth."""


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass
class MetricsReport:
    image_id: str = ""
    dice: float = UNDEFINED
    acc: float = UNDEFINED
    rec: float = UNDEFINED
    pre: float = UNDEFINED
    c: float = UNDEFINED
    a: float = UNDEFINED
    l: float = UNDEFINED  # noqa: E741
    cal: float = UNDEFINED
    s_rec: float = UNDEFINED
    error: str | None = None

    def values(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in FIELDS}

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in FIELDS:
            if math.isnan(d[k]):
                d[k] = None
        return d


@dataclass(frozen=True)
class EvalConfig:
    cal_radius: float = 2.0
    srec_tolerance: int = 0


def _pair(pred, gt):
    p, g = np.asarray(pred, dtype=bool), np.asarray(gt, dtype=bool)
    if p.shape != g.shape:
        raise ValueError(f"dimension mismatch: pred {p.shape} vs gt {g.shape}")
    return p, g


def confusion(pred, gt) -> ConfusionCounts:
    p, g = _pair(pred, gt)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return ConfusionCounts(tp, fp, fn, p.size - tp - fp - fn)


def _ratio(num: int, den: int, vacuous: bool) -> float:
    if den:
        return num / den
    return 1.0 if vacuous else UNDEFINED


def overlap_metrics(c: ConfusionCounts) -> tuple[float, float, float, float]:
    """(dice, acc, rec, pre) from confusion counts."""
    both_empty = c.tp + c.fp + c.fn == 0
    dice = _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, both_empty)
    acc = _ratio(c.tp + c.tn, c.total, False)
    rec = _ratio(c.tp, c.tp + c.fn, both_empty)
    pre = _ratio(c.tp, c.tp + c.fp, both_empty)
    return dice, acc, rec, pre


def cal_score(pred, gt, dilation_radius: float = 2.0) -> tuple[float, float, float, float]:
    """Connectivity, area, length and their product.

    ``C = 1 - min(1, |#cc(gt) - #cc(pred)| / |gt|)``,
    ``A = |(dil(pred) & gt) | (pred & dil(gt))| / |pred | gt|``,
    ``L = |(skel(pred) & dil(gt)) | (dil(pred) & skel(gt))| / |skel(pred) | skel(gt)|``.
    """
    p, g = _pair(pred, gt)
    n_gt = int(np.count_nonzero(g))
    if n_gt == 0:
        raise EmptyGroundTruthError("CAL is undefined for an empty ground truth")
    conn = 1.0 - min(1.0, abs(count_components(g) - count_components(p)) / n_gt)
    dp, dg = dilate_disc(p, dilation_radius), dilate_disc(g, dilation_radius)
    area = np.count_nonzero((dp & g) | (p & dg)) / np.count_nonzero(p | g)
    sp, sg = zhang_suen_thin(p), zhang_suen_thin(g)
    length = np.count_nonzero((sp & dg) | (dp & sg)) / np.count_nonzero(sp | sg)
    return conn, float(area), float(length), conn * area * length


def skeleton_recall(pred, gt, tolerance_radius: int = 0) -> float:
    """Fraction of ground-truth skeleton pixels hit by the predicted skeleton."""
    p, g = _pair(pred, gt)
    sg = zhang_suen_thin(g)
    n = int(np.count_nonzero(sg))
    if n == 0:
        raise EmptyGroundTruthError("S-Rec is undefined for an empty ground-truth skeleton")
    sp = dilate_disc(zhang_suen_thin(p), tolerance_radius)
    return np.count_nonzero(sg & sp) / n


def evaluate_all(pred, gt, cfg: EvalConfig | None = None, image_id: str = "") -> MetricsReport:
    """Every metric for one image; CAL/S-Rec failures are recorded, not raised."""
    cfg = cfg or EvalConfig()
    dice, acc, rec, pre = overlap_metrics(confusion(pred, gt))
    report = MetricsReport(image_id, dice, acc, rec, pre)
    try:
        report.c, report.a, report.l, report.cal = cal_score(pred, gt, cfg.cal_radius)
        report.s_rec = skeleton_recall(pred, gt, cfg.srec_tolerance)
    except EmptyGroundTruthError as exc:
        report.error = str(exc)
    return report


@dataclass
class Summary:
    means: dict[str, float]
    undefined: dict[str, int]
    n_images: int
    errors: dict[str, str] = field(default_factory=dict)

    def as_report(self) -> MetricsReport:
        return MetricsReport("mean", **self.means)


def summarize(reports) -> Summary:
    """Unweighted per-image means; undefined entries are counted per field."""
    reports = sorted(reports, key=lambda r: r.image_id)
    means, undefined = {}, {}
    for k in FIELDS:
        vals = np.array([getattr(r, k) for r in reports], dtype=np.float64)
        ok = ~np.isnan(vals)
        undefined[k] = int((~ok).sum())
        means[k] = float(vals[ok].mean()) if ok.any() else UNDEFINED
    errors = {r.image_id: r.error for r in reports if r.error}
    return Summary(means, undefined, len(reports), errors)


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def reports_to_csv(reports, summary: Summary | None = None) -> str:
    """CSV with columns ``image_id,dice,acc,rec,pre,c,a,l,cal,s_rec``."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("image_id",) + FIELDS)
    for r in sorted(reports, key=lambda r: r.image_id):
        writer.writerow([r.image_id] + [_fmt(getattr(r, k)) for k in FIELDS])
    if summary is not None:
        writer.writerow(["mean"] + [_fmt(summary.means[k]) for k in FIELDS])
    return buf.getvalue()


def reports_to_jsonl(reports, summary: Summary | None = None) -> str:
    lines = [json.dumps(r.to_dict()) for r in sorted(reports, key=lambda r: r.image_id)]
    if summary is not None:
        row = summary.as_report().to_dict()
        row.update(n_images=summary.n_images, undefined=summary.undefined, errors=summary.errors)
        lines.append(json.dumps(row))
    return "\n".join(lines) + "\n"
