"""Pixel-classification metrics for binary vessel segmentation.

From the confusion counts (tp, tn, fp, fn) five scores are derived:

    sensitivity   se  = tp / (tp + fn)
    specificity   sp  = tn / (tn + fp)
    accuracy      acc = (tp + tn) / (tp + tn + fp + fn)
    auc_point         = 1 - (fpr + fnr) / 2  =  (se + sp) / 2
    f1                = 2 tp / (2 tp + fp + fn)

``auc_point`` is a threshold-point quantity, algebraically identical to
(se + sp)/2; it is reported under that name to keep it distinct from the
ROC-integral AUC, which is computed separately from the probability maps
(trapezoidal rule over 256 thresholds) and labeled ``auc_roc``.

A metric whose denominator is empty is reported as None, never as 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ROC_BINS = 256

OVERLAY_COLORS = {
    "tp": (0, 255, 0),    # green
    "fp": (255, 0, 0),    # red
    "fn": (0, 0, 255),    # blue
    "tn": (0, 0, 0),      # black
}


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError(f"confusion counts must be non-negative, got {self}")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.tn + other.tn,
                               self.fp + other.fp, self.fn + other.fn)


@dataclass
class MetricReport:
    se: float | None
    sp: float | None
    acc: float | None
    auc_point: float | None
    f1: float | None
    counts: ConfusionCounts
    auc_roc: float | None = None

    def as_dict(self) -> dict:
        return {
            "se": self.se, "sp": self.sp, "acc": self.acc,
            "auc_point": self.auc_point, "auc_roc": self.auc_roc, "f1": self.f1,
            "tp": self.counts.tp, "tn": self.counts.tn,
            "fp": self.counts.fp, "fn": self.counts.fn,
        }


def _check_binary(name: str, arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    if not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} mask must be binary (0/1)")
    return arr.astype(bool)


def confusion_counts(pred_mask: np.ndarray, gt_mask: np.ndarray,
                     roi_mask: np.ndarray | None = None) -> ConfusionCounts:
    """Exact pixel counts over the evaluated (roi-true) region."""
    pred = _check_binary("prediction", pred_mask)
    gt = _check_binary("ground truth", gt_mask)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    if roi_mask is not None:
        roi = _check_binary("roi", roi_mask)
        if roi.shape != gt.shape:
            raise ValueError(f"roi shape {roi.shape} != mask shape {gt.shape}")
        pred = pred[roi]
        gt = gt[roi]
    return ConfusionCounts(
        tp=int(np.count_nonzero(pred & gt)),
        tn=int(np.count_nonzero(~pred & ~gt)),
        fp=int(np.count_nonzero(pred & ~gt)),
        fn=int(np.count_nonzero(~pred & gt)),
    )


def _ratio(num: int, den: int) -> float | None:
    return None if den == 0 else num / den


def compute_metrics(c: ConfusionCounts) -> MetricReport:
    se = _ratio(c.tp, c.tp + c.fn)
    sp = _ratio(c.tn, c.tn + c.fp)
    acc = _ratio(c.tp + c.tn, c.total)
    auc_point = None
    if se is not None and sp is not None:
        auc_point = 1.0 - 0.5 * (c.fp / (c.fp + c.tn) + c.fn / (c.fn + c.tp))
    f1 = _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn)
    return MetricReport(se=se, sp=sp, acc=acc, auc_point=auc_point, f1=f1, counts=c)


def aggregate(counts: list[ConfusionCounts], mode: str = "global") -> MetricReport:
    """Combine per-image counts.

    ``global`` (default) sums the counts and computes the metrics once;
    ``mean`` averages per-image metrics, skipping images where a metric is
    undefined. Output labels always carry the mode.
    """
    if not counts:
        raise ValueError("aggregate needs at least one ConfusionCounts")
    total = counts[0]
    for c in counts[1:]:
        total = total + c
    if mode == "global":
        return compute_metrics(total)
    if mode != "mean":
        raise ValueError(f"unknown aggregation mode {mode!r}")
    reports = [compute_metrics(c) for c in counts]

    def avg(values):
        present = [v for v in values if v is not None]
        return sum(present) / len(present) if present else None

    return MetricReport(
        se=avg([r.se for r in reports]),
        sp=avg([r.sp for r in reports]),
        acc=avg([r.acc for r in reports]),
        auc_point=avg([r.auc_point for r in reports]),
        f1=avg([r.f1 for r in reports]),
        counts=total,
    )


class RocAccumulator:
    """ROC-integral AUC over vessel-probability maps, accumulated across
    images as histograms so aggregation stays exact and cheap."""

    def __init__(self, bins: int = ROC_BINS):
        self.bins = bins
        self.pos = np.zeros(bins, dtype=np.int64)
        self.neg = np.zeros(bins, dtype=np.int64)

    def add(self, vessel_probs: np.ndarray, gt_mask: np.ndarray,
            roi_mask: np.ndarray | None = None) -> None:
        gt = _check_binary("ground truth", gt_mask)
        p = np.asarray(vessel_probs)
        if p.shape != gt.shape:
            raise ValueError(f"probability shape {p.shape} != mask shape {gt.shape}")
        if roi_mask is not None:
            roi = _check_binary("roi", roi_mask)
            p, gt = p[roi], gt[roi]
        idx = np.clip((p * self.bins).astype(np.int64), 0, self.bins - 1)
        self.pos += np.bincount(idx[gt], minlength=self.bins)
        self.neg += np.bincount(idx[~gt], minlength=self.bins)

    def auc(self) -> float | None:
        n_pos = int(self.pos.sum())
        n_neg = int(self.neg.sum())
        if n_pos == 0 or n_neg == 0:
            return None
        # tpr/fpr at thresholds k/bins, k = 0..bins: suffix sums of the histograms
        tp = np.concatenate([[n_pos], n_pos - np.cumsum(self.pos)])
        fp = np.concatenate([[n_neg], n_neg - np.cumsum(self.neg)])
        tpr = tp / n_pos
        fpr = fp / n_neg
        order = np.argsort(fpr)
        return float(np.trapezoid(tpr[order], fpr[order]))


def render_overlay(pred_mask: np.ndarray, gt_mask: np.ndarray) -> np.ndarray:
    """RGB comparison image: true positives green, false positives red,
    false negatives blue, true negatives black."""
    pred = _check_binary("prediction", pred_mask)
    gt = _check_binary("ground truth", gt_mask)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    out = np.zeros(pred.shape + (3,), dtype=np.uint8)
    out[pred & gt] = OVERLAY_COLORS["tp"]
    out[pred & ~gt] = OVERLAY_COLORS["fp"]
    out[~pred & gt] = OVERLAY_COLORS["fn"]
    return out
