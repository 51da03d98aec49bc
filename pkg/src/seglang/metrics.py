"""Segmentation metrics: per-pair IoU and the dataset aggregates.

cIoU pools intersection and union pixel counts over the whole list before
dividing; gIoU averages per-sample IoU values. mIoU is reported as an alias
of gIoU.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError


@dataclass
class MetricReport:
    per_sample_iou: list[float]
    ciou: float
    giou: float
    miou: float
    n: int
    total_intersection: int
    total_union: int

    def to_dict(self) -> dict:
        return {"ciou": self.ciou, "giou": self.giou, "miou": self.miou,
                "n": self.n, "total_intersection": self.total_intersection,
                "total_union": self.total_union,
                "per_sample_iou": self.per_sample_iou}


def iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """|pred ∩ gt| / |pred ∪ gt|; both empty counts as a perfect 1.0."""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ShapeError(f"iou: pred {pred.shape} vs gt {gt.shape}")
    union = int(np.logical_or(pred, gt).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(pred, gt).sum()) / union


def aggregate(pairs: list[tuple[np.ndarray, np.ndarray]]) -> MetricReport:
    if not pairs:
        raise ValueError("aggregate: empty sample list")
    per_sample = [iou(p, g) for p, g in pairs]
    inter = 0
    union = 0
    for p, g in pairs:
        p = np.asarray(p, dtype=bool)
        g = np.asarray(g, dtype=bool)
        inter += int(np.logical_and(p, g).sum())
        union += int(np.logical_or(p, g).sum())
    ciou = inter / union if union > 0 else 1.0
    giou = float(np.mean(per_sample))
    return MetricReport(per_sample_iou=per_sample, ciou=ciou, giou=giou,
                        miou=giou, n=len(pairs), total_intersection=inter,
                        total_union=union)
