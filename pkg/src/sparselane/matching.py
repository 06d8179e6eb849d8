"""Bipartite assignment of predicted lanes to ground-truth lanes.

Training treats lane detection as set prediction: every ground-truth lane
must be claimed by exactly one of the K predictions, chosen to minimise a
combined regression + classification cost.  The solve is exact; ties are
broken toward the lexicographically smallest pair list so tests and resumed
runs see identical assignments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import Lane

LOG_EPS = 1e-8

# Default mixing weights for the assignment cost.
ASSIGN_W_REG = 10.0
ASSIGN_W_CLS = 1.0


class InfeasibleAssignmentError(ValueError):
    """Raised when there are more ground-truth lanes than predictions."""


@dataclass(frozen=True)
class Assignment:
    """Pairs (gt_index, pred_index), one per ground-truth lane."""

    pairs: tuple[tuple[int, int], ...]
    total_cost: float

    def pred_for_gt(self) -> dict[int, int]:
        return {g: k for g, k in self.pairs}


def assignment_cost(
    pred_xs: np.ndarray,
    pred_scores: np.ndarray,
    gt_lanes: list[Lane],
    img_width: float,
    w_reg: float = ASSIGN_W_REG,
    w_cls: float = ASSIGN_W_CLS,
) -> np.ndarray:
    """Build the G x K cost matrix for gt-to-prediction assignment.

    cost[g, k] = w_reg * mean_{valid rows of g} |pred_x - gt_x| / img_width
               + w_cls * (-log(score_k + 1e-8))

    Regression is averaged over the ground-truth lane's valid rows only and
    normalised by image width so both terms live on comparable scales.

    Args:
        pred_xs: (N, K) predicted x per grid row per anchor, raw pixels.
        pred_scores: (K,) confidence in [0, 1].
        gt_lanes: ground-truth lanes on the same grid, each with >= 1 valid row.
        img_width: image width used for normalisation.

    Returns:
        (G, K) float64 cost matrix.
    """
    pred_xs = np.asarray(pred_xs, dtype=np.float64)
    pred_scores = np.asarray(pred_scores, dtype=np.float64)
    if pred_xs.ndim != 2:
        raise ValueError(f"pred_xs must be (N, K), got shape {pred_xs.shape}")
    n_rows, k = pred_xs.shape
    if pred_scores.shape != (k,):
        raise ValueError(f"pred_scores must be ({k},), got {pred_scores.shape}")
    if len(gt_lanes) < 1:
        raise ValueError("need at least one ground-truth lane")

    cls_cost = -np.log(pred_scores + LOG_EPS)  # (K,)
    cost = np.empty((len(gt_lanes), k), dtype=np.float64)
    for g, gt in enumerate(gt_lanes):
        if gt.xs.shape != (n_rows,):
            raise ValueError(f"gt lane {g} has {gt.xs.size} rows, predictions have {n_rows}")
        if gt.n_valid == 0:
            raise ValueError(f"gt lane {g} has no valid rows")
        diff = np.abs(pred_xs[gt.valid, :] - gt.xs[gt.valid, None]) / img_width
        cost[g] = w_reg * diff.mean(axis=0) + w_cls * cls_cost
    return cost


def _optimal_cost(cost: np.ndarray) -> float:
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum())


def hungarian(cost: np.ndarray) -> Assignment:
    """Minimum-cost injective assignment of every row to a distinct column.

    Exact (no greedy shortcuts).  Among equal-cost optima the returned pair
    list is the lexicographically smallest, which pins the result for
    degenerate cost matrices.

    Args:
        cost: (G, K) matrix with G <= K, finite entries.

    Returns:
        Assignment with G pairs sorted by gt index.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.size == 0:
        raise ValueError(f"cost must be a non-empty 2-d matrix, got shape {cost.shape}")
    g, k = cost.shape
    if g > k:
        raise InfeasibleAssignmentError(f"{g} ground-truth lanes but only {k} predictions")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains non-finite entries")

    total = _optimal_cost(cost)

    # Fix pairs row by row, always taking the smallest column that still
    # permits an optimal completion.  Cheap at lane-detection sizes and
    # makes tie-breaking deterministic.
    tol = 1e-9 * max(1.0, float(np.abs(cost).max()))
    remaining_total = total
    free_cols = list(range(k))
    pairs: list[tuple[int, int]] = []
    for row in range(g):
        sub_rows = np.arange(row + 1, g)
        chosen = -1
        for col in free_cols:
            rest_cols = [c for c in free_cols if c != col]
            if sub_rows.size == 0:
                rest = 0.0
            else:
                rest = _optimal_cost(cost[np.ix_(sub_rows, rest_cols)])
            if cost[row, col] + rest <= remaining_total + tol:
                chosen = col
                remaining_total -= cost[row, col]
                break
        assert chosen >= 0, "optimal completion must exist"
        free_cols.remove(chosen)
        pairs.append((row, chosen))

    return Assignment(pairs=tuple(pairs), total_cost=total)
