"""Training losses: focal classification, row-wise L1, and line IoU.

All functions are differentiable torch ops.  Regression terms are computed
only on rows where the ground truth is valid, so a prediction that wanders
outside the image keeps receiving gradient and can come back.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import torch

from .matching import Assignment

logger = logging.getLogger(__name__)

FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0

# Half-width of the virtual lane segment used by the IoU loss, in pixels,
# for an 800 px wide image.  Scaled linearly for other widths.
LIOU_BASE_RADIUS = 15.0
LIOU_BASE_WIDTH = 800.0

SCORE_EPS = 1e-6


@dataclass(frozen=True)
class LossWeights:
    """Mixing weights for the combined loss."""

    w_cls: float = 10.0
    w_reg: float = 0.5
    w_liou: float = 5.0


@dataclass
class LossBreakdown:
    """Per-component totals (summed over stages) and their weighted sum."""

    cls: torch.Tensor
    reg: torch.Tensor
    liou: torch.Tensor
    total: torch.Tensor
    weights: LossWeights

    def scalars(self) -> dict[str, float]:
        return {
            "cls": float(self.cls),
            "reg": float(self.reg),
            "liou": float(self.liou),
            "total": float(self.total),
        }


def liou_radius_for_width(img_width: float) -> float:
    """Default line-IoU radius, proportional to image width."""
    return LIOU_BASE_RADIUS * img_width / LIOU_BASE_WIDTH


def focal_loss(
    scores: torch.Tensor,
    positive: Sequence[int],
    alpha: float = FOCAL_ALPHA,
    gamma: float = FOCAL_GAMMA,
) -> torch.Tensor:
    """Binary focal loss over anchor confidences, averaged over all anchors.

    Anchors listed in ``positive`` are treated as lane hits, the rest as
    background:

        hit:  alpha * (1 - p)^gamma * (-log p)
        miss: (1 - alpha) * p^gamma * (-log(1 - p))

    Args:
        scores: (K,) probabilities, strictly inside (0, 1).
        positive: indices of anchors assigned to a ground-truth lane.

    Returns:
        Scalar tensor, mean over the K anchors.
    """
    scores = torch.as_tensor(scores)
    if scores.ndim != 1:
        raise ValueError(f"scores must be 1-d, got shape {tuple(scores.shape)}")
    if bool((scores <= 0).any()) or bool((scores >= 1).any()):
        raise ValueError("scores must lie strictly inside (0, 1)")

    is_pos = torch.zeros(scores.shape[0], dtype=torch.bool, device=scores.device)
    pos_idx = list(positive)
    if pos_idx:
        is_pos[torch.as_tensor(pos_idx, device=scores.device)] = True

    p = scores
    pos_term = alpha * (1.0 - p) ** gamma * -torch.log(p)
    neg_term = (1.0 - alpha) * p**gamma * -torch.log(1.0 - p)
    return torch.where(is_pos, pos_term, neg_term).mean()


def l1_reg_loss(
    pred_xs: torch.Tensor,
    gt_xs: torch.Tensor,
    gt_valid: torch.Tensor,
) -> torch.Tensor:
    """Mean |pred_x - gt_x| in raw pixels over the gt's valid rows."""
    pred_xs = torch.as_tensor(pred_xs)
    gt_xs = torch.as_tensor(gt_xs)
    gt_valid = torch.as_tensor(gt_valid, dtype=torch.bool)
    if pred_xs.shape != gt_xs.shape or gt_xs.shape != gt_valid.shape:
        raise ValueError("pred_xs, gt_xs and gt_valid must share one shape")
    if not bool(gt_valid.any()):
        raise ValueError("ground-truth lane has no valid rows")
    return (pred_xs - gt_xs).abs()[gt_valid].mean()


def line_iou(
    pred_xs: torch.Tensor,
    gt_xs: torch.Tensor,
    radius: float,
    pred_valid: torch.Tensor | None = None,
    gt_valid: torch.Tensor | None = None,
) -> torch.Tensor:
    """Signed IoU between two lanes widened to horizontal segments.

    Each valid row contributes a segment [x - radius, x + radius]; overlap
    may go negative when the lanes are far apart, so the result lives in
    [-1, 1].  Only rows valid in both lanes count; with no such rows the
    IoU is defined as 0.

    Args:
        pred_xs / gt_xs: (N,) x positions in pixels.
        radius: segment half-width, positive.
        pred_valid / gt_valid: optional (N,) masks, default all valid.

    Returns:
        Scalar tensor in [-1, 1].
    """
    pred_xs = torch.as_tensor(pred_xs)
    gt_xs = torch.as_tensor(gt_xs)
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if pred_xs.shape != gt_xs.shape:
        raise ValueError("pred_xs and gt_xs must share one shape")
    mask = torch.ones(pred_xs.shape, dtype=torch.bool, device=pred_xs.device)
    if pred_valid is not None:
        mask &= torch.as_tensor(pred_valid, dtype=torch.bool)
    if gt_valid is not None:
        mask &= torch.as_tensor(gt_valid, dtype=torch.bool)
    if not bool(mask.any()):
        logger.warning("line IoU pair shares no valid rows; IoU defined as 0")
        return torch.zeros((), dtype=pred_xs.dtype, device=pred_xs.device)

    gap = (pred_xs - gt_xs).abs()
    inter = (2.0 * radius - gap)[mask].sum()
    union = (2.0 * radius + gap)[mask].sum()
    return inter / union


def line_iou_loss(
    pred_xs: torch.Tensor,
    gt_xs: torch.Tensor,
    radius: float,
    pred_valid: torch.Tensor | None = None,
    gt_valid: torch.Tensor | None = None,
) -> torch.Tensor:
    """1 - line_iou, in [0, 2]."""
    return 1.0 - line_iou(pred_xs, gt_xs, radius, pred_valid, gt_valid)


def total_loss(
    stage_outputs: Sequence,
    gt_xs: torch.Tensor,
    gt_valid: torch.Tensor,
    assignments: Sequence[Assignment],
    weights: LossWeights = LossWeights(),
    liou_radius: float = LIOU_BASE_RADIUS,
) -> LossBreakdown:
    """Combined loss over decoder stages with deep supervision.

    Every stage is scored independently against the ground truth using its
    own assignment, and the per-component sums are mixed as

        total = w_cls * cls + w_reg * reg + w_liou * liou

    Regression and IoU terms average over assigned pairs; classification
    covers all anchors.  Stages with no ground truth contribute only their
    classification term.

    Args:
        stage_outputs: per-stage objects exposing ``scores`` (K,) and
            ``lane_xs`` (N, K) tensors, earliest stage first.
        gt_xs: (G, N) ground-truth x positions (sentinel on invalid rows).
        gt_valid: (G, N) bool mask.
        assignments: one Assignment per stage, pairing gts with anchors.
        liou_radius: segment half-width for the IoU term, pixels.

    Returns:
        LossBreakdown whose components sum over stages.
    """
    if len(stage_outputs) != len(assignments):
        raise ValueError("need one assignment per stage")
    if len(stage_outputs) == 0:
        raise ValueError("need at least one stage")

    ref = torch.as_tensor(stage_outputs[0].scores)
    zero = torch.zeros((), dtype=ref.dtype, device=ref.device)
    cls_sum, reg_sum, liou_sum = zero, zero.clone(), zero.clone()

    gt_xs = torch.as_tensor(gt_xs)
    gt_valid = torch.as_tensor(gt_valid, dtype=torch.bool)

    for out, assign in zip(stage_outputs, assignments):
        scores = torch.as_tensor(out.scores).clamp(SCORE_EPS, 1.0 - SCORE_EPS)
        lane_xs = torch.as_tensor(out.lane_xs)
        positives = [k for _, k in assign.pairs]
        cls_sum = cls_sum + focal_loss(scores, positives)

        if assign.pairs:
            reg_terms = []
            liou_terms = []
            for g, k in assign.pairs:
                reg_terms.append(l1_reg_loss(lane_xs[:, k], gt_xs[g], gt_valid[g]))
                iou = line_iou(lane_xs[:, k], gt_xs[g], liou_radius, gt_valid=gt_valid[g])
                liou_terms.append(1.0 - iou)
            reg_sum = reg_sum + torch.stack(reg_terms).mean()
            liou_sum = liou_sum + torch.stack(liou_terms).mean()

    total = weights.w_cls * cls_sum + weights.w_reg * reg_sum + weights.w_liou * liou_sum
    return LossBreakdown(cls=cls_sum, reg=reg_sum, liou=liou_sum, total=total, weights=weights)
