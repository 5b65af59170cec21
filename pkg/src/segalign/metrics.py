"""Segmentation metrics: confusion accumulation and mean IoU reporting.

The accumulator is a K x K integer matrix with ground truth on rows and
predictions on columns; merging accumulators is plain matrix addition, so
per-batch (or per-worker) accumulation composes exactly.  IoU per class is
TP / (TP + FP + FN); classes that never occur in the ground truth are left
out of the mean, and the background class (index 0) joins the mean only on
request.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError


class ConfusionAccumulator:
    """Streaming confusion matrix over integer label maps."""

    def __init__(self, num_classes: int, ignore_index: int | None = None):
        if num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        self.num_classes = num_classes
        self.ignore_index = ignore_index
        self.matrix = np.zeros((num_classes, num_classes), dtype=np.int64)

    def update(self, ground_truth: np.ndarray, prediction: np.ndarray) -> None:
        gt = np.asarray(ground_truth).reshape(-1)
        pred = np.asarray(prediction).reshape(-1)
        if gt.shape != pred.shape:
            raise ValueError(f"shape mismatch: {ground_truth.shape} vs {prediction.shape}")
        if self.ignore_index is not None:
            keep = gt != self.ignore_index
            gt = gt[keep]
            pred = pred[keep]
        if gt.size == 0:
            return
        if gt.min() < 0 or gt.max() >= self.num_classes:
            raise DataError(f"ground-truth labels outside [0, {self.num_classes})")
        if pred.min() < 0 or pred.max() >= self.num_classes:
            raise DataError(f"predicted labels outside [0, {self.num_classes})")
        flat = gt * self.num_classes + pred
        counts = np.bincount(flat, minlength=self.num_classes * self.num_classes)
        self.matrix += counts.reshape(self.num_classes, self.num_classes)

    def merge(self, other: "ConfusionAccumulator") -> None:
        if other.num_classes != self.num_classes:
            raise ValueError("cannot merge accumulators of different widths")
        self.matrix += other.matrix

    @property
    def total(self) -> int:
        return int(self.matrix.sum())


@dataclass(frozen=True)
class MiouReport:
    """Per-class IoU (nan where the class has no ground-truth support),
    the mean over supported (and included) classes, and the support."""

    per_class: np.ndarray
    mean: float
    support: np.ndarray


def miou(acc: ConfusionAccumulator, include_background: bool = True) -> MiouReport:
    """Mean IoU from an accumulator.

    IoU_k = TP_k / (TP_k + FP_k + FN_k).  Classes with zero ground-truth
    support are excluded from the mean; index 0 additionally requires
    `include_background`.  An accumulator with no counted pixels is an error.
    """
    matrix = acc.matrix
    if matrix.sum() == 0:
        raise DataError("empty accumulator: no pixels were evaluated")
    true_pos = np.diag(matrix).astype(np.float64)
    support = matrix.sum(axis=1)
    false_pos = matrix.sum(axis=0) - true_pos
    false_neg = support - true_pos
    per_class = np.full(acc.num_classes, np.nan)
    supported = support > 0
    denom = true_pos + false_pos + false_neg
    per_class[supported] = true_pos[supported] / denom[supported]
    considered = supported.copy()
    if not include_background:
        considered[0] = False
    if not np.any(considered):
        raise DataError("no class with ground-truth support to average")
    return MiouReport(
        per_class=per_class,
        mean=float(per_class[considered].mean()),
        support=support,
    )


def _slug(name: str) -> str:
    return name.strip().replace(" ", "_")


def format_report(report: MiouReport, names) -> str:
    """Plain-text table: one row per class, then the mean."""
    width = max([len(n) for n in names] + [10])
    lines = [f"{'class'.ljust(width)}  {'IoU':>8}  {'support':>10}"]
    for i, name in enumerate(names):
        iou = report.per_class[i]
        iou_text = "   -" if np.isnan(iou) else f"{iou:8.4f}"
        lines.append(f"{name.ljust(width)}  {iou_text:>8}  {report.support[i]:>10d}")
    lines.append(f"{'mean IoU'.ljust(width)}  {report.mean:8.4f}")
    return "\n".join(lines) + "\n"


def key_value_lines(report: MiouReport, names) -> list[str]:
    """Machine-readable form: miou plus one iou.<class> line per class."""
    lines = [f"miou={report.mean:.6f}"]
    for i, name in enumerate(names):
        iou = report.per_class[i]
        value = "nan" if np.isnan(iou) else f"{iou:.6f}"
        lines.append(f"iou.{_slug(name)}={value}")
        lines.append(f"support.{_slug(name)}={int(report.support[i])}")
    return lines


def write_report(report: MiouReport, names, table_path, kv_path) -> None:
    Path(table_path).write_text(format_report(report, names))
    Path(kv_path).write_text("".join(f"{line}\n" for line in key_value_lines(report, names)))
