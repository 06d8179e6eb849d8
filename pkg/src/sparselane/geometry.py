"""Lane and anchor geometry on a fixed vertical sample grid.

A lane is a polyline sampled at N fixed image heights: an array of x
positions plus a per-row validity mask.  Anchors are straight lines
obtained by rotating a vertical line around a point on the image's
vertical axis; predictions are anchors plus per-row x offsets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Maximum anchor rotation, radians.  Angles must stay strictly inside
# (-MAX_ANGLE, MAX_ANGLE) so tan() stays well conditioned.
MAX_ANGLE = math.pi / 3.0

# x value stored on rows whose validity flag is False.
INVALID_X = -2.0


@dataclass(frozen=True)
class YGrid:
    """N sample heights spaced evenly from 0 to ``img_height`` inclusive."""

    ys: np.ndarray
    img_height: float

    def __post_init__(self):
        ys = np.asarray(self.ys, dtype=np.float64)
        object.__setattr__(self, "ys", ys)
        if ys.ndim != 1 or ys.size < 2:
            raise ValueError("grid needs at least two sample heights")
        if ys[0] != 0.0 or not math.isclose(ys[-1], self.img_height, rel_tol=0.0, abs_tol=1e-9):
            raise ValueError("grid must span [0, img_height]")
        steps = np.diff(ys)
        if np.any(steps <= 0.0):
            raise ValueError("grid heights must increase strictly")
        if np.max(steps) - np.min(steps) > 1e-9:
            raise ValueError("grid heights must be evenly spaced")

    @property
    def n_points(self) -> int:
        return int(self.ys.size)

    @property
    def spacing(self) -> float:
        return float(self.ys[1] - self.ys[0])


def sample_y_grid(n_points: int, img_height: float) -> YGrid:
    """Build the row grid y_i = img_height / (n_points - 1) * i.

    Args:
        n_points: number of sample rows N, at least 2.
        img_height: image height in pixels, positive.

    Returns:
        YGrid spanning [0, img_height] with uniform spacing.
    """
    if n_points < 2:
        raise ValueError(f"n_points must be >= 2, got {n_points}")
    if img_height <= 0:
        raise ValueError(f"img_height must be positive, got {img_height}")
    ys = img_height / (n_points - 1) * np.arange(n_points, dtype=np.float64)
    return YGrid(ys=ys, img_height=float(img_height))


@dataclass
class Lane:
    """Sampled lane: x per grid row plus validity, optional confidence."""

    xs: np.ndarray
    valid: np.ndarray
    score: float | None = None

    def __post_init__(self):
        xs = np.array(self.xs, dtype=np.float64)
        valid = np.array(self.valid, dtype=bool)
        if xs.shape != valid.shape or xs.ndim != 1:
            raise ValueError("xs and valid must be 1-d arrays of equal length")
        xs[~valid] = INVALID_X
        self.xs = xs
        self.valid = valid

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())


@dataclass(frozen=True)
class AnchorSpec:
    """Straight-line anchor: foot position, rotation point ratio, angle.

    The anchor passes through (center_x, rotation_ratio * img_height) and
    makes ``angle`` radians with the vertical axis.  Positive angles tilt
    the top of the line toward larger x (the origin is the top-left image
    corner with y growing downward).
    """

    center_x: float
    rotation_ratio: float
    angle: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.rotation_ratio <= 1.0:
            raise ValueError(f"rotation_ratio must be in (0, 1], got {self.rotation_ratio}")
        if not abs(self.angle) < MAX_ANGLE:
            raise ValueError(f"|angle| must be < pi/3, got {self.angle}")


def init_anchor_centers(k: int, img_width: float) -> np.ndarray:
    """Place k anchor feet at horizontal cell midpoints (j + 0.5) / k * W."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if img_width <= 0:
        raise ValueError(f"img_width must be positive, got {img_width}")
    return (np.arange(k, dtype=np.float64) + 0.5) / k * img_width


def rotate_anchor(spec: AnchorSpec, grid: YGrid) -> Lane:
    """Sample a rotated anchor line on the grid.

    x_i = center_x + (y_rot - y_i) * tan(angle) with the rotation point at
    y_rot = rotation_ratio * img_height.  All rows are valid; callers apply
    image-bound clipping when composing the final lane.
    """
    y_rot = spec.rotation_ratio * grid.img_height
    xs = spec.center_x + (y_rot - grid.ys) * math.tan(spec.angle)
    return Lane(xs=xs, valid=np.ones(grid.n_points, dtype=bool))


def compose_lane(anchor: Lane, offsets: np.ndarray, img_width: float) -> Lane:
    """Add per-row offsets to an anchor and clip to the image.

    Rows keep the anchor's validity, intersected with 0 <= x < img_width.
    Out-of-range rows are marked invalid but their x is discarded (sentinel),
    matching the convention that metrics and losses skip invalid rows.
    """
    offsets = np.asarray(offsets, dtype=np.float64)
    if offsets.shape != anchor.xs.shape:
        raise ValueError(f"offsets shape {offsets.shape} != anchor shape {anchor.xs.shape}")
    xs = anchor.xs + offsets
    valid = anchor.valid & (xs >= 0.0) & (xs < img_width)
    return Lane(xs=xs, valid=valid, score=anchor.score)


def resample_polyline(
    src_ys: np.ndarray,
    src_xs: np.ndarray,
    src_valid: np.ndarray,
    dst_ys: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Linearly resample a sampled polyline onto new heights.

    A destination row is valid when it falls inside the source span and
    both bracketing source rows are valid (an exact height hit inherits
    that single row's validity).  Everything else, including rows between
    invalid source rows, comes back invalid with the sentinel x.

    Args:
        src_ys: (S,) source heights, any order, sorted internally.
        src_xs: (S,) source x positions.
        src_valid: (S,) bool validity per source row.
        dst_ys: (D,) target heights.

    Returns:
        (xs, valid) arrays of shape (D,).
    """
    src_ys = np.asarray(src_ys, dtype=np.float64)
    src_xs = np.asarray(src_xs, dtype=np.float64)
    src_valid = np.asarray(src_valid, dtype=bool)
    dst_ys = np.asarray(dst_ys, dtype=np.float64)
    if not (src_ys.shape == src_xs.shape == src_valid.shape) or src_ys.ndim != 1:
        raise ValueError("source arrays must be 1-d and of equal length")
    if src_ys.size == 0:
        return np.full(dst_ys.shape, INVALID_X), np.zeros(dst_ys.shape, dtype=bool)

    order = np.argsort(src_ys, kind="stable")
    ys, xs, vs = src_ys[order], src_xs[order], src_valid[order]

    out_x = np.full(dst_ys.shape, INVALID_X, dtype=np.float64)
    out_v = np.zeros(dst_ys.shape, dtype=bool)
    inside = (dst_ys >= ys[0]) & (dst_ys <= ys[-1])
    if not inside.any():
        return out_x, out_v

    idx = np.searchsorted(ys, dst_ys, side="left").clip(0, ys.size - 1)
    exact = inside & (ys[idx] == dst_ys)
    if exact.any():
        hit = idx[exact]
        out_v[exact] = vs[hit]
        out_x[exact] = np.where(vs[hit], xs[hit], INVALID_X)

    interp = inside & ~exact
    if interp.any():
        hi = idx[interp]
        lo = hi - 1
        span = ys[hi] - ys[lo]
        ok = vs[lo] & vs[hi] & (span > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (dst_ys[interp] - ys[lo]) / np.where(span > 0, span, 1.0)
        mixed = xs[lo] + t * (xs[hi] - xs[lo])
        out_x[interp] = np.where(ok, mixed, INVALID_X)
        out_v[interp] = ok
    return out_x, out_v


def valid_runs(valid: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of True as half-open (start, stop) index pairs."""
    valid = np.asarray(valid, dtype=bool)
    runs = []
    start = None
    for i, flag in enumerate(valid):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            runs.append((start, i))
            start = None
    if start is not None:
        runs.append((start, valid.size))
    return runs


@dataclass
class AnchorSet:
    """K anchor specs sharing one grid."""

    specs: list[AnchorSpec]
    grid: YGrid

    @classmethod
    def uniform(cls, k: int, img_width: float, grid: YGrid, rotation_ratio: float) -> "AnchorSet":
        """K vertical anchors with feet spread evenly across the width."""
        centers = init_anchor_centers(k, img_width)
        specs = [AnchorSpec(center_x=float(c), rotation_ratio=rotation_ratio) for c in centers]
        return cls(specs=specs, grid=grid)

    def rotate(self, angles: np.ndarray) -> list[Lane]:
        """Re-rotate every anchor by the paired angle (radians)."""
        angles = np.asarray(angles, dtype=np.float64)
        if angles.shape != (len(self.specs),):
            raise ValueError(f"need {len(self.specs)} angles, got shape {angles.shape}")
        lanes = []
        for spec, theta in zip(self.specs, angles):
            rotated = AnchorSpec(spec.center_x, spec.rotation_ratio, float(theta))
            lanes.append(rotate_anchor(rotated, self.grid))
        return lanes
