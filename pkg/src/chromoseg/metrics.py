"""Segmentation evaluation: confusion matrices, the eight per-class/aggregate
scores (accuracy, Dice, IoU, precision, recall, FNR, FPR, Hausdorff), and
report assembly.

Zero-denominator convention: a class absent from both maps scores a perfect
1 (0 for the error rates) and is flagged "absent"; ratios that stay 0/0 when
the class appears in exactly one map are NaN and excluded from averages,
with exclusion counts disclosed in the report.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

RATIO_METRICS = ("dice", "iou", "precision", "recall", "fnr", "fpr")
REPORT_COLUMNS = ("acc", "dice", "iou", "recall", "precision", "fnr", "fpr", "hausdorff")


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> np.ndarray:
    """counts[i, j] = number of pixels of true class i predicted as class j."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    if pred.size and (pred.max() >= num_classes or gt.max() >= num_classes):
        raise ValueError("class id outside range")
    flat = gt.reshape(-1).astype(np.int64) * num_classes + pred.reshape(-1).astype(np.int64)
    return np.bincount(flat, minlength=num_classes * num_classes).reshape(
        num_classes, num_classes
    )


def pixel_accuracy(cm: np.ndarray) -> float:
    total = cm.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    return float(np.trace(cm) / total)


@dataclass
class ClassScores:
    """Per-class ratio metrics; NaN marks an undefined (excluded) entry."""

    dice: np.ndarray
    iou: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    fnr: np.ndarray
    fpr: np.ndarray
    absent: np.ndarray  # class missing from both maps; perfect by convention


def per_class_metrics(cm: np.ndarray) -> ClassScores:
    cm = np.asarray(cm, dtype=np.int64)
    c = cm.shape[0]
    total = cm.sum()
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    tn = total - tp - fp - fn

    def ratio(num, den):
        out = np.full(c, np.nan)
        ok = den > 0
        out[ok] = num[ok] / den[ok]
        return out

    dice = ratio(2 * tp, 2 * tp + fp + fn)
    iou = ratio(tp, tp + fp + fn)
    precision = ratio(tp, tp + fp)
    recall = ratio(tp, tp + fn)
    # complement form keeps recall + fnr == 1 exact in floating point
    fnr = 1.0 - recall
    fpr = ratio(fp, fp + tn)

    absent = (tp + fp + fn) == 0
    for arr, fill in ((dice, 1.0), (iou, 1.0), (precision, 1.0), (recall, 1.0), (fnr, 0.0)):
        arr[absent] = fill
    return ClassScores(dice=dice, iou=iou, precision=precision, recall=recall,
                       fnr=fnr, fpr=fpr, absent=absent)


def hausdorff_distance(pred_points: np.ndarray, gt_points: np.ndarray) -> float:
    """Symmetric Hausdorff distance (Euclidean) between two pixel point sets.

    Exact via nearest-neighbor queries; NaN when either set is empty.
    """
    a = np.asarray(pred_points, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(gt_points, dtype=np.float64).reshape(-1, 2)
    if len(a) == 0 or len(b) == 0:
        return float("nan")
    forward = cKDTree(b).query(a)[0].max()
    backward = cKDTree(a).query(b)[0].max()
    return float(max(forward, backward))


def class_points(label_map: np.ndarray, cls: int) -> np.ndarray:
    """(row, col) coordinates of the pixels of one class."""
    return np.argwhere(np.asarray(label_map) == cls)


@dataclass
class SampleMetrics:
    """Scores of one prediction/ground-truth pair."""

    acc: float
    scores: ClassScores
    hausdorff: np.ndarray  # per class, NaN when either point set is empty
    cm: np.ndarray


def evaluate_sample(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> SampleMetrics:
    cm = confusion_matrix(pred, gt, num_classes)
    scores = per_class_metrics(cm)
    hd = np.array(
        [
            hausdorff_distance(class_points(pred, c), class_points(gt, c))
            for c in range(num_classes)
        ]
    )
    return SampleMetrics(acc=pixel_accuracy(cm), scores=scores, hausdorff=hd, cm=cm)


def foreground_dice(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> float:
    """Mean Dice over the non-background classes of one sample."""
    scores = per_class_metrics(confusion_matrix(pred, gt, num_classes))
    vals = scores.dice[1:]
    vals = vals[~np.isnan(vals)]
    return float(vals.mean()) if vals.size else float("nan")


@dataclass
class MetricsReport:
    """Per-class and aggregate means over a sample set.

    ``per_class[metric]`` is a (C,) vector of sample means; ``aggregate``
    holds the macro means over all classes and over foreground classes
    only, plus sample-mean accuracy. ``excluded[metric]`` counts the
    undefined per-sample entries dropped per class.
    """

    n_samples: int
    num_classes: int
    per_class: dict[str, np.ndarray]
    aggregate: dict[str, dict[str, float]]
    excluded: dict[str, list[int]]
    absent_counts: list[int]
    confusion: np.ndarray

    def to_dict(self) -> dict:
        def pct(name, value):
            return value * 100.0 if name != "hausdorff" else value

        out = {
            "n_samples": self.n_samples,
            "num_classes": self.num_classes,
            "units": "percent (hausdorff: pixels)",
            "per_class": {
                k: [None if np.isnan(v) else pct(k, float(v)) for v in vec]
                for k, vec in self.per_class.items()
            },
            "aggregate": {
                mode: {
                    k: (None if np.isnan(v) else pct(k, float(v)))
                    for k, v in vals.items()
                }
                for mode, vals in self.aggregate.items()
            },
            "excluded_undefined": self.excluded,
            "absent_in_both_counts": self.absent_counts,
            "confusion_counts": self.confusion.tolist(),
            "confusion_row_normalized_percent": normalized_confusion(self.confusion).tolist(),
        }
        return out

    def csv_row(self, name: str, mode: str = "all") -> dict[str, str]:
        vals = self.aggregate[mode]
        row = {"method": name, "classes": mode}
        for col in REPORT_COLUMNS:
            v = vals[col]
            if np.isnan(v):
                row[col] = ""
            elif col == "hausdorff":
                row[col] = f"{v:.4f}"
            else:
                row[col] = f"{v * 100.0:.4f}"
        return row


def normalized_confusion(cm: np.ndarray) -> np.ndarray:
    """Row-normalized percentages: share of true class i predicted as j."""
    cm = np.asarray(cm, dtype=np.float64)
    rows = cm.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(rows > 0, cm / rows * 100.0, np.nan)


def aggregate_report(samples: list[SampleMetrics], num_classes: int) -> MetricsReport:
    """Mean over samples per class, then macro mean over classes.

    NaN entries (undefined ratios, Hausdorff on empty sets) are excluded
    from means; their counts are reported.
    """
    if not samples:
        raise ValueError("cannot aggregate zero samples")

    per_class: dict[str, np.ndarray] = {}
    excluded: dict[str, list[int]] = {}
    stacked = {
        name: np.stack([getattr(s.scores, name) for s in samples]) for name in RATIO_METRICS
    }
    stacked["hausdorff"] = np.stack([s.hausdorff for s in samples])
    for name, mat in stacked.items():
        with np.errstate(invalid="ignore"), warnings.catch_warnings():
            # all-NaN columns legitimately aggregate to NaN (fully excluded)
            warnings.simplefilter("ignore", RuntimeWarning)
            per_class[name] = np.nanmean(mat, axis=0)
        excluded[name] = [int(np.isnan(mat[:, c]).sum()) for c in range(num_classes)]

    acc = float(np.mean([s.acc for s in samples]))
    aggregate = {}
    for mode, sel in (("all", slice(None)), ("foreground", slice(1, None))):
        entry = {"acc": acc}
        for name in (*RATIO_METRICS, "hausdorff"):
            vec = per_class[name][sel]
            vec = vec[~np.isnan(vec)]
            entry[name] = float(vec.mean()) if vec.size else float("nan")
        aggregate[mode] = entry

    absent_counts = [int(sum(s.scores.absent[c] for s in samples)) for c in range(num_classes)]
    confusion = np.sum([s.cm for s in samples], axis=0)
    return MetricsReport(
        n_samples=len(samples),
        num_classes=num_classes,
        per_class=per_class,
        aggregate=aggregate,
        excluded=excluded,
        absent_counts=absent_counts,
        confusion=confusion,
    )


def write_report_json(path: str | Path, report: MetricsReport) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")


def write_report_csv(path: str | Path, rows: list[dict[str, str]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["method", "classes", *REPORT_COLUMNS])
        writer.writeheader()
        writer.writerows(rows)
