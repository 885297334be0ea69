"""
`hieraseg` segmentation metrics.

Per-level confusion matrices (rows = truth, columns = prediction), mIoU over
classes with a non-zero union, mAcc over classes present in the truth, and
a hierarchical report that lists every level side by side together with
the path consistency rate of the predictions.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

from hieraseg import settings
from hieraseg.exceptions import ShapeError, ValidationError
from hieraseg.hierarchy import Hierarchy, LevelLabels

logger = logging.getLogger(__name__)


class ConfusionMatrix:
    def __init__(self, num_classes: int, counts: Optional[np.ndarray] = None, ignored: int = 0):
        assert num_classes > 0, f"num_classes must be positive, got {num_classes}"
        self.num_classes = num_classes
        if counts is None:
            counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        if counts.shape != (num_classes, num_classes):
            raise ShapeError("confusion matrix", counts.shape, (num_classes, num_classes))
        self.counts = counts
        self.ignored = ignored

    def __repr__(self):
        return f"ConfusionMatrix({self.num_classes} classes, {self.total} pixels)"

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accumulate(self, pred: np.ndarray, truth: np.ndarray, ignore_index: int = settings.IGNORE_INDEX) -> "ConfusionMatrix":
        pred = np.asarray(pred)
        truth = np.asarray(truth)
        if pred.shape != truth.shape:
            raise ShapeError("accumulate", pred.shape, truth.shape)
        keep = truth != ignore_index
        self.ignored += int((~keep).sum())
        t = truth[keep].astype(np.int64)
        p = pred[keep].astype(np.int64)
        for name, values in (("truth", t), ("prediction", p)):
            if values.size and (values.min() < 0 or values.max() >= self.num_classes):
                raise ValidationError(
                    f"{name} class out of range [0, {self.num_classes}): "
                    f"{int(values.min())}..{int(values.max())}"
                )
        self.counts += np.bincount(
            t * self.num_classes + p, minlength=self.num_classes**2
        ).reshape(self.num_classes, self.num_classes)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ShapeError("merge", self.counts.shape, other.counts.shape)
        return ConfusionMatrix(self.num_classes, self.counts + other.counts, self.ignored + other.ignored)

    def _check_nonempty(self) -> None:
        if self.total == 0:
            raise ValidationError("Confusion matrix is empty; no pixels were evaluated")

    def iou(self) -> np.ndarray:
        """Per-class IoU; NaN where the class has zero union."""
        tp = np.diag(self.counts).astype(np.float64)
        union = self.counts.sum(axis=0) + self.counts.sum(axis=1) - tp
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(union > 0, tp / union, np.nan)

    def accuracy(self) -> np.ndarray:
        """Per-class accuracy (recall); NaN where the class never occurs in the truth."""
        tp = np.diag(self.counts).astype(np.float64)
        support = self.counts.sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(support > 0, tp / support, np.nan)

    def miou(self) -> float:
        self._check_nonempty()
        return float(np.nanmean(self.iou()))

    def macc(self) -> float:
        self._check_nonempty()
        return float(np.nanmean(self.accuracy()))

    def pixel_accuracy(self) -> float:
        self._check_nonempty()
        return float(np.trace(self.counts)) / self.total


def accumulate(cm: ConfusionMatrix, pred: np.ndarray, truth: np.ndarray, ignore_index: int = settings.IGNORE_INDEX) -> ConfusionMatrix:
    return cm.accumulate(pred, truth, ignore_index)


def miou(cm: ConfusionMatrix) -> float:
    return cm.miou()


def macc(cm: ConfusionMatrix) -> float:
    return cm.macc()


class HierarchicalConfusion:
    """One confusion matrix per level plus path-consistency counts of the predictions."""

    def __init__(self, hierarchy: Hierarchy):
        self.hierarchy = hierarchy
        self.levels = [ConfusionMatrix(n) for n in hierarchy.num_classes]
        self.consistent = 0
        self.predicted = 0

    def accumulate(self, pred: LevelLabels, truth: LevelLabels) -> "HierarchicalConfusion":
        if pred.shape != truth.shape:
            raise ShapeError("accumulate", pred.shape, truth.shape)
        for level in truth.present:
            if pred.rasters[level] is None:
                raise ValidationError(f"Prediction is missing level {level + 1}")
            self.levels[level].accumulate(pred[level], truth[level], truth.ignore_index)
        if pred.is_complete:
            evaluated = ~(pred.ignore_mask() | truth.ignore_mask())
            valid = self.hierarchy.valid_path_mask([pred[i] for i in range(pred.num_levels)])
            self.consistent += int((valid & evaluated).sum())
            self.predicted += int(evaluated.sum())
        return self

    def merge(self, other: "HierarchicalConfusion") -> "HierarchicalConfusion":
        merged = HierarchicalConfusion(self.hierarchy)
        merged.levels = [a.merge(b) for a, b in zip(self.levels, other.levels)]
        merged.consistent = self.consistent + other.consistent
        merged.predicted = self.predicted + other.predicted
        return merged

    @property
    def consistency_rate(self) -> Optional[float]:
        if self.predicted == 0:
            return None
        return self.consistent / self.predicted

    def report(self, levels: Optional[Sequence[int]] = None) -> "HierarchicalReport":
        chosen = range(self.hierarchy.num_levels) if levels is None else levels
        return HierarchicalReport(
            levels=[
                LevelReport.from_matrix(self.hierarchy, level, self.levels[level])
                for level in chosen
                if self.levels[level].total > 0
            ],
            consistency_rate=self.consistency_rate,
        )


def _clean(value: float) -> Optional[float]:
    return None if math.isnan(value) else float(value)


@dataclass
class LevelReport:
    level: str
    miou: float
    macc: float
    pixel_accuracy: float
    pixels: int
    class_iou: dict[str, Optional[float]] = field(default_factory=dict)
    class_accuracy: dict[str, Optional[float]] = field(default_factory=dict)

    @classmethod
    def from_matrix(cls, hierarchy: Hierarchy, level: int, cm: ConfusionMatrix) -> "LevelReport":
        names = hierarchy.class_names(level)
        return cls(
            level=hierarchy.level_names[level],
            miou=cm.miou(),
            macc=cm.macc(),
            pixel_accuracy=cm.pixel_accuracy(),
            pixels=cm.total,
            class_iou={name: _clean(v) for name, v in zip(names, cm.iou())},
            class_accuracy={name: _clean(v) for name, v in zip(names, cm.accuracy())},
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "level": self.level,
            "miou": self.miou,
            "macc": self.macc,
            "pixel_accuracy": self.pixel_accuracy,
            "pixels": self.pixels,
            "class_iou": dict(self.class_iou),
            "class_accuracy": dict(self.class_accuracy),
        }


@dataclass
class HierarchicalReport:
    levels: list[LevelReport]
    consistency_rate: Optional[float] = None

    def level(self, name: str) -> LevelReport:
        for report in self.levels:
            if report.level == name:
                return report
        raise KeyError(name)

    def to_dict(self) -> dict[str, Any]:
        return {
            "levels": [report.to_dict() for report in self.levels],
            "consistency_rate": self.consistency_rate,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        """Levels as columns, metrics (in percent) as rows."""
        header = ["metric", *(report.level for report in self.levels)]
        rows = [
            ["mIoU", *(f"{100 * r.miou:.2f}" for r in self.levels)],
            ["mAcc", *(f"{100 * r.macc:.2f}" for r in self.levels)],
            ["aAcc", *(f"{100 * r.pixel_accuracy:.2f}" for r in self.levels)],
        ]
        widths = [max(len(row[i]) for row in [header, *rows]) for i in range(len(header))]
        lines = ["  ".join(cell.rjust(w) if i else cell.ljust(w) for i, (cell, w) in enumerate(zip(row, widths))) for row in [header, *rows]]
        if self.consistency_rate is not None:
            lines.append(f"consistency rate: {100 * self.consistency_rate:.2f}%")
        return "\n".join(lines) + "\n"


def evaluate(hierarchy: Hierarchy, pred: LevelLabels, truth: LevelLabels) -> HierarchicalReport:
    return HierarchicalConfusion(hierarchy).accumulate(pred, truth).report()
