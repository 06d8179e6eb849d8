"""Detection metrics: segment IoU, lane matching, F1 and point accuracy.

Lanes are compared by widening each one into horizontal segments of a
fixed virtual width on every grid row and taking the ratio of summed
overlaps to summed unions over rows where both lanes are valid.  The
closed form avoids rasterising masks while tracking the mask-based
procedure closely for near-vertical lanes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import Lane

DEFAULT_LANE_WIDTH = 30.0
DEFAULT_IOU_THRESHOLD = 0.5
DEFAULT_POINT_TOLERANCE = 20.0

_FORBIDDEN_COST = 1e6


def lane_pair_iou(pred: Lane, gt: Lane, width: float = DEFAULT_LANE_WIDTH) -> float:
    """Row-segment IoU between two lanes, in [0, 1].

    Rows valid in both lanes contribute overlap max(width - |dx|, 0) and
    union width + |dx|; other rows are skipped.  No co-valid rows gives 0.
    """
    if width <= 0:
        raise ValueError(f"width must be positive, got {width}")
    if pred.xs.shape != gt.xs.shape:
        raise ValueError("lanes must be sampled on the same grid")
    both = pred.valid & gt.valid
    if not both.any():
        return 0.0
    gap = np.abs(pred.xs[both] - gt.xs[both])
    inter = np.maximum(width - gap, 0.0).sum()
    union = (width + gap).sum()
    return float(inter / union)


@dataclass
class ImageMatch:
    """Matching outcome for one image."""

    tp: int
    fp: int
    fn: int
    pairs: list[tuple[int, int, float]]  # (gt index, pred index, IoU)


def match_and_score(
    preds: list[Lane],
    gts: list[Lane],
    width: float = DEFAULT_LANE_WIDTH,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> ImageMatch:
    """One-to-one matching between predictions and ground truth.

    Pairs with IoU <= threshold are never matched; among the remaining
    options the pairing minimises total (1 - IoU).
    """
    if not preds or not gts:
        return ImageMatch(tp=0, fp=len(preds), fn=len(gts), pairs=[])

    iou = np.zeros((len(gts), len(preds)), dtype=np.float64)
    for g, gt in enumerate(gts):
        for p, pred in enumerate(preds):
            iou[g, p] = lane_pair_iou(pred, gt, width)

    cost = 1.0 - iou
    cost[iou <= iou_threshold] = _FORBIDDEN_COST
    rows, cols = linear_sum_assignment(cost)
    pairs = [
        (int(g), int(p), float(iou[g, p]))
        for g, p in zip(rows, cols)
        if iou[g, p] > iou_threshold
    ]
    tp = len(pairs)
    return ImageMatch(tp=tp, fp=len(preds) - tp, fn=len(gts) - tp, pairs=pairs)


def tusimple_accuracy(
    preds: list[Lane],
    gts: list[Lane],
    tol: float = DEFAULT_POINT_TOLERANCE,
    width: float = DEFAULT_LANE_WIDTH,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> float:
    """Fraction of ground-truth points reproduced within ``tol`` pixels.

    Lanes are first matched one-to-one; a gt point counts as hit when its
    lane is matched and the paired prediction is valid on that row with
    |dx| <= tol.  Points of unmatched gt lanes count as misses.  Returns
    1.0 when there are no gt points at all.
    """
    total = sum(lane.n_valid for lane in gts)
    if total == 0:
        return 1.0
    match = match_and_score(preds, gts, width, iou_threshold)
    correct = 0
    for g, p, _ in match.pairs:
        gt, pred = gts[g], preds[p]
        rows = gt.valid & pred.valid & (np.abs(pred.xs - gt.xs) <= tol)
        correct += int(rows.sum())
    return correct / total


@dataclass
class EvalReport:
    """Aggregated detection metrics plus per-image diagnostics."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    gt_points: int = 0
    hit_points: int = 0
    width: float = DEFAULT_LANE_WIDTH
    iou_threshold: float = DEFAULT_IOU_THRESHOLD
    point_tolerance: float = DEFAULT_POINT_TOLERANCE
    per_image: list[dict] = field(default_factory=list)

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2.0 * p * r / (p + r) if p + r else 0.0

    @property
    def accuracy(self) -> float:
        return self.hit_points / self.gt_points if self.gt_points else 1.0

    def add_image(self, image_id: str, preds: list[Lane], gts: list[Lane]) -> ImageMatch:
        """Score one image and fold it into the running totals."""
        match = match_and_score(preds, gts, self.width, self.iou_threshold)
        self.tp += match.tp
        self.fp += match.fp
        self.fn += match.fn
        gt_points = sum(lane.n_valid for lane in gts)
        hits = 0
        for g, p, _ in match.pairs:
            gt, pred = gts[g], preds[p]
            rows = gt.valid & pred.valid & (np.abs(pred.xs - gt.xs) <= self.point_tolerance)
            hits += int(rows.sum())
        self.gt_points += gt_points
        self.hit_points += hits
        self.per_image.append(
            {
                "image": image_id,
                "tp": match.tp,
                "fp": match.fp,
                "fn": match.fn,
                "gt_lanes": len(gts),
                "pred_lanes": len(preds),
                "mean_iou": float(np.mean([iou for _, _, iou in match.pairs]))
                if match.pairs
                else 0.0,
            }
        )
        return match

    def to_key_values(self) -> dict:
        return {
            "images": len(self.per_image),
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "accuracy": self.accuracy,
            "iou_threshold": self.iou_threshold,
            "lane_width": self.width,
            "point_tolerance": self.point_tolerance,
        }

    def to_text(self) -> str:
        lines = [
            "lane detection evaluation",
            "-" * 40,
            f"images            {len(self.per_image)}",
            f"lane width        {self.width:g} px",
            f"IoU threshold     {self.iou_threshold:g}",
            f"point tolerance   {self.point_tolerance:g} px",
            "",
            f"true positives    {self.tp}",
            f"false positives   {self.fp}",
            f"false negatives   {self.fn}",
            f"precision         {self.precision:.4f}",
            f"recall            {self.recall:.4f}",
            f"F1                {self.f1:.4f}",
            f"point accuracy    {self.accuracy:.4f}",
        ]
        return "\n".join(lines) + "\n"
