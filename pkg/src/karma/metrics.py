"""Segmentation evaluation from the pixel confusion matrix, plus run-level
t-based confidence intervals.

MCC is computed per class by one-vs-rest 2x2 reduction and averaged.
Zero-support classes contribute 0 to averages by default; pass
``present_only=True`` to average over present classes instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # [K, K] int64; rows = true class, cols = predicted

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)


def confusion(pred_mask, true_mask, num_classes: int) -> ConfusionMatrix:
    pred = np.asarray(pred_mask).reshape(-1).astype(np.int64)
    true = np.asarray(true_mask).reshape(-1).astype(np.int64)
    if pred.shape != true.shape:
        raise ValueError("prediction and truth must have the same shape")
    for arr, what in ((pred, "prediction"), (true, "truth")):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"{what} labels out of range [0, {num_classes})")
    counts = np.bincount(true * num_classes + pred, minlength=num_classes * num_classes)
    return ConfusionMatrix(counts.reshape(num_classes, num_classes))


@dataclass
class SegMetrics:
    per_class_iou: np.ndarray
    per_class_f1: np.ndarray
    per_class_mcc: np.ndarray
    miou_with_bg: float
    miou_wo_bg: float
    f1_with_bg: float
    f1_wo_bg: float
    balanced_acc: float
    mean_mcc: float
    fw_iou: float
    support: np.ndarray = field(repr=False, default=None)

    def as_dict(self) -> dict[str, float]:
        return {
            "miou_with_bg": self.miou_with_bg,
            "miou_wo_bg": self.miou_wo_bg,
            "f1_with_bg": self.f1_with_bg,
            "f1_wo_bg": self.f1_wo_bg,
            "balanced_acc": self.balanced_acc,
            "mean_mcc": self.mean_mcc,
            "fw_iou": self.fw_iou,
        }


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros_like(num, dtype=np.float64)
    nz = den != 0
    out[nz] = num[nz] / den[nz]
    return out


def compute_metrics(
    cm: ConfusionMatrix, background_class: int = 0, present_only: bool = False
) -> SegMetrics:
    c = cm.counts.astype(np.float64)
    total = c.sum()
    if total <= 0:
        raise ValueError("confusion matrix is empty")
    k = cm.num_classes
    tp = np.diag(c)
    row = c.sum(axis=1)
    col = c.sum(axis=0)
    fp = col - tp
    fn = row - tp
    tn = total - tp - fp - fn

    iou = _safe_div(tp, tp + fp + fn)
    f1 = _safe_div(2 * tp, 2 * tp + fp + fn)
    recall = _safe_div(tp, row)
    mcc_num = tp * tn - fp * fn
    mcc_den = np.sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    mcc = _safe_div(mcc_num, mcc_den)

    keep = row > 0 if present_only else np.ones(k, dtype=bool)
    non_bg = np.arange(k) != background_class
    keep_wo = keep & non_bg

    def avg(values: np.ndarray, mask: np.ndarray) -> float:
        return float(values[mask].mean()) if mask.any() else 0.0

    freq = row / total
    return SegMetrics(
        per_class_iou=iou,
        per_class_f1=f1,
        per_class_mcc=mcc,
        miou_with_bg=avg(iou, keep),
        miou_wo_bg=avg(iou, keep_wo),
        f1_with_bg=avg(f1, keep),
        f1_wo_bg=avg(f1, keep_wo),
        balanced_acc=avg(recall, keep),
        mean_mcc=avg(mcc, keep),
        fw_iou=float((freq * iou).sum()),
        support=row.astype(np.int64),
    )


# Two-sided critical values of Student's t. Rows: confidence level; columns:
# degrees of freedom 1..30 then 40, 60, 120, inf (standard tables).
_T_DF_TAIL = (40, 60, 120, float("inf"))
_T_TABLE = {
    0.90: (
        6.314, 2.920, 2.353, 2.132, 2.015, 1.943, 1.895, 1.860, 1.833, 1.812,
        1.796, 1.782, 1.771, 1.761, 1.753, 1.746, 1.740, 1.734, 1.729, 1.725,
        1.721, 1.717, 1.714, 1.711, 1.708, 1.706, 1.703, 1.701, 1.699, 1.697,
        1.684, 1.671, 1.658, 1.645,
    ),
    0.95: (
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
        2.201, 2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086,
        2.080, 2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
        2.021, 2.000, 1.980, 1.960,
    ),
    0.99: (
        63.657, 9.925, 5.841, 4.604, 4.032, 3.707, 3.499, 3.355, 3.250, 3.169,
        3.106, 3.055, 3.012, 2.977, 2.947, 2.921, 2.898, 2.878, 2.861, 2.845,
        2.831, 2.819, 2.807, 2.797, 2.787, 2.779, 2.771, 2.763, 2.756, 2.750,
        2.704, 2.660, 2.617, 2.576,
    ),
}


def t_critical(df: int, confidence: float = 0.95) -> float:
    """Tabulated two-sided t critical value; 1/df interpolation past df=30."""
    if confidence not in _T_TABLE:
        raise ValueError(f"confidence must be one of {sorted(_T_TABLE)}")
    row = _T_TABLE[confidence]
    if df < 1:
        raise ValueError("degrees of freedom must be >= 1")
    if df <= 30:
        return row[df - 1]
    anchors = [(30, row[29])] + [(d, v) for d, v in zip(_T_DF_TAIL, row[30:])]
    for (d0, v0), (d1, v1) in zip(anchors[:-1], anchors[1:]):
        if df <= d1:
            x0 = 1.0 / d0
            x1 = 0.0 if d1 == float("inf") else 1.0 / d1
            x = 1.0 / df
            return v1 + (v0 - v1) * (x - x1) / (x0 - x1)
    return row[-1]


def mean_ci(values, confidence: float = 0.95) -> tuple[float, float, float]:
    """t-based confidence interval for the mean of independent run scores."""
    v = np.asarray(values, dtype=np.float64)
    n = v.size
    if n < 2:
        raise ValueError("mean_ci needs at least two values")
    mean = float(v.mean())
    s = float(v.std(ddof=1))
    half = t_critical(n - 1, confidence) * s / np.sqrt(n)
    return mean, mean - half, mean + half
