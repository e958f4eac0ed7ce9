"""Pixel-wise segmentation metrics and set-level reports.

Degenerate cases are kept total: two empty masks score 1 on every overlap
measure, one empty mask scores 0, and AVD is undefined (``nan``) whenever a
mask is empty.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .exceptions import DataError

METRIC_NAMES = ("recall", "precision", "dice", "avd", "vs")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int


def _as_binary(mask, name):
    arr = np.asarray(mask)
    if arr.dtype != bool:
        if not np.isin(arr, (0, 1)).all():
            raise DataError(f"{name} must be binary")
        arr = arr.astype(bool)
    return arr


def confusion(pred, gt) -> ConfusionCounts:
    pred = _as_binary(pred, "pred")
    gt = _as_binary(gt, "gt")
    if pred.shape != gt.shape:
        raise DataError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return ConfusionCounts(tp, fp, fn, pred.size - tp - fp - fn)


def _ratio(num, den, both_empty) -> float:
    if den == 0:
        return 1.0 if both_empty else 0.0
    return num / den


def dice(c: ConfusionCounts) -> float:
    return _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, c.tp + c.fp + c.fn == 0)


def precision(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fp, c.tp + c.fp + c.fn == 0)


def recall(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fn, c.tp + c.fp + c.fn == 0)


def vs(c: ConfusionCounts) -> float:
    """Volumetric similarity ``1 - |fp - fn| / (2 tp + fp + fn)``."""
    den = 2 * c.tp + c.fp + c.fn
    if den == 0:
        return 1.0
    return 1.0 - abs(c.fp - c.fn) / den


def _directed_mean_distance(a: np.ndarray, b: np.ndarray) -> float:
    # exact Euclidean distance from every pixel to the nearest pixel of b
    dist = ndimage.distance_transform_edt(~b)
    return float(dist[a].mean())


def avd(pred, gt) -> float:
    """Averaged Hausdorff distance in pixels.

    The larger of the two directed mean nearest-neighbour distances between
    the foreground pixel sets. Raises ``DataError`` if either mask is empty.
    """
    pred = _as_binary(pred, "pred")
    gt = _as_binary(gt, "gt")
    if pred.shape != gt.shape:
        raise DataError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    if not pred.any() or not gt.any():
        raise DataError("AVD is undefined for an empty mask")
    return max(_directed_mean_distance(pred, gt), _directed_mean_distance(gt, pred))


def case_metrics(pred, gt) -> dict[str, float]:
    c = confusion(pred, gt)
    try:
        d = avd(pred, gt)
    except DataError:
        d = math.nan
    return {"recall": recall(c), "precision": precision(c), "dice": dice(c), "avd": d, "vs": vs(c)}


def _json_number(value: float):
    return None if math.isnan(value) else value


@dataclass
class MetricReport:
    case_ids: list[str]
    cases: list[dict[str, float]]
    mean: dict[str, float] = field(default_factory=dict)
    std: dict[str, float] = field(default_factory=dict)
    avd_excluded: int = 0

    def format_row(self, label: str = "") -> str:
        """Single ``m ± s`` line in the order Rec., Prec., Dice, AVD, VS."""
        cells = [
            "n/a" if math.isnan(self.mean[k]) else f"{self.mean[k]:.3f} ± {self.std[k]:.2f}"
            for k in METRIC_NAMES
        ]
        return " | ".join(([label] if label else []) + cells)

    def summary(self) -> dict:
        return {
            "n_cases": len(self.cases),
            "std_kind": "population",
            "mean": {k: _json_number(v) for k, v in self.mean.items()},
            "std": {k: _json_number(v) for k, v in self.std.items()},
            "avd_excluded": self.avd_excluded,
            "table_row": self.format_row(),
        }

    def write(self, csv_path, json_path) -> None:
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("case_id",) + METRIC_NAMES)
            for cid, row in zip(self.case_ids, self.cases):
                writer.writerow([cid] + [
                    "n/a" if math.isnan(row[k]) else repr(row[k]) for k in METRIC_NAMES
                ])
        with open(json_path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, allow_nan=False)


def evaluate_set(pairs, case_ids=None) -> MetricReport:
    """Per-case metrics with mean and population standard deviation.

    ``pairs`` is a sequence of ``(pred, gt)`` masks. Cases whose AVD is
    undefined are left out of the AVD statistics and counted in
    ``avd_excluded``.
    """
    pairs = list(pairs)
    if not pairs:
        raise DataError("evaluate_set needs at least one case")
    if case_ids is None:
        case_ids = [str(i) for i in range(len(pairs))]
    cases = [case_metrics(p, g) for p, g in pairs]
    report = MetricReport(case_ids=list(case_ids), cases=cases)
    for k in METRIC_NAMES:
        vals = np.array([c[k] for c in cases], dtype=np.float64)
        vals = vals[~np.isnan(vals)]
        if k == "avd":
            report.avd_excluded = len(cases) - len(vals)
        report.mean[k] = float(vals.mean()) if len(vals) else math.nan
        report.std[k] = float(vals.std()) if len(vals) else math.nan
    return report
