"""Confusion-matrix metrics, relative-improvement columns and per-group summaries.

Blade (foreground, mask value 1) is the positive class.  All reported
metrics are percentages.  Empty denominators follow one rule: a 0/0 ratio
scores 100 when the prediction agrees with an empty ground truth for that
quantity and 0 otherwise.
"""

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import ShapeError

__all__ = [
    "METRIC_NAMES",
    "Confusion",
    "MetricsReport",
    "GroupStats",
    "confusion",
    "compute_metrics",
    "relative_metric",
    "aggregate_groups",
    "macro_average",
    "micro_average",
]

METRIC_NAMES = ("accuracy", "precision", "recall", "f1", "miou", "iou_background", "iou_blade")


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other):
        return Confusion(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    def swapped(self):
        """Same counts with background treated as the positive class."""
        return Confusion(tp=self.tn, fp=self.fn, fn=self.fp, tn=self.tp)


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    iou_background: float
    iou_blade: float
    miou: float
    relative_f1: Optional[float] = None
    relative_miou: Optional[float] = None
    group: str = ""
    image_id: str = ""
    confusion: Optional[Confusion] = field(default=None, repr=False)

    def as_dict(self):
        d = asdict(self)
        if self.confusion is not None:
            d["confusion"] = asdict(self.confusion)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("confusion") is not None:
            d["confusion"] = Confusion(**d["confusion"])
        return cls(**d)


@dataclass
class GroupStats:
    min: float
    q1: float
    median: float
    q3: float
    max: float
    mean: float
    n: int


def confusion(pred, gt):
    """Pixel counts of the four prediction/ground-truth outcomes."""
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return Confusion(tp=tp, fp=fp, fn=fn, tn=pred.size - tp - fp - fn)


def _ratio(num, den, empty_ok):
    if den == 0:
        return 100.0 if empty_ok else 0.0
    return 100.0 * num / den


def compute_metrics(c, group="", image_id=""):
    if c.total <= 0:
        raise ValueError("confusion matrix is empty")
    precision = _ratio(c.tp, c.tp + c.fp, empty_ok=c.fn == 0)
    recall = _ratio(c.tp, c.tp + c.fn, empty_ok=c.fp == 0)
    # 2TP/(2TP+FP+FN) equals the harmonic mean of precision and recall
    f1 = _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, empty_ok=True)
    iou_blade = _ratio(c.tp, c.tp + c.fp + c.fn, empty_ok=True)
    iou_background = _ratio(c.tn, c.tn + c.fp + c.fn, empty_ok=True)
    return MetricsReport(
        accuracy=100.0 * (c.tp + c.tn) / c.total,
        precision=precision,
        recall=recall,
        f1=f1,
        iou_background=iou_background,
        iou_blade=iou_blade,
        miou=(iou_background + iou_blade) / 2,
        group=group,
        image_id=image_id,
        confusion=c,
    )


def relative_metric(value, baseline):
    """Value as a percentage of a baseline, rounded to two decimals."""
    if baseline == 0:
        raise ZeroDivisionError("baseline must be nonzero")
    if baseline < 0:
        raise ValueError("baseline must be positive")
    return round(100.0 * value / baseline, 2)


def macro_average(reports):
    """Mean of per-image metrics."""
    if not reports:
        raise ValueError("no reports to average")
    vals = {k: float(np.mean([getattr(r, k) for r in reports])) for k in METRIC_NAMES}
    vals["miou"] = (vals["iou_background"] + vals["iou_blade"]) / 2
    return MetricsReport(**vals)


def micro_average(reports):
    """Metrics of the pooled confusion matrix."""
    if not reports:
        raise ValueError("no reports to average")
    total = reports[0].confusion
    for r in reports[1:]:
        total = total + r.confusion
    return compute_metrics(total)


def _summary(values):
    v = np.sort(np.asarray(values, dtype=np.float64))
    q1, med, q3 = np.percentile(v, [25, 50, 75], method="linear")
    return GroupStats(
        min=float(v[0]),
        q1=float(q1),
        median=float(med),
        q3=float(q3),
        max=float(v[-1]),
        mean=float(v.mean()),
        n=int(v.size),
    )


def aggregate_groups(reports, metrics=METRIC_NAMES):
    """Five-number summary plus mean of each metric, per group.

    Returns ``{group: {metric: GroupStats}}``.  Quartiles use linear
    interpolation between order statistics (inclusive method).
    """
    if not reports:
        raise ValueError("no reports to aggregate")
    by_group = {}
    for r in reports:
        if not r.group:
            raise ValueError(f"report {r.image_id!r} has no group id")
        by_group.setdefault(r.group, []).append(r)
    return {
        g: {m: _summary([getattr(r, m) for r in rs]) for m in metrics}
        for g, rs in sorted(by_group.items())
    }
