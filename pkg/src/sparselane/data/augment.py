"""Train-time augmentation: one affine warp shared by image and labels.

The sampled transform combines an optional horizontal flip with a
rotation/scale about the image centre and a translation.  Labels go
through the exact same matrix: each maximal run of valid rows becomes a
point set, is transformed, and is resampled onto the fixed y grid, so
validity gaps inside a lane survive augmentation instead of being bridged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import cv2
import numpy as np

from ..geometry import Lane, YGrid, resample_polyline, valid_runs
from .sample import Sample


@dataclass(frozen=True)
class AugmentParams:
    """Sampling ranges for the random transform."""

    max_translate: float = 0.1  # fraction of each image side
    max_rotation_deg: float = 6.0
    scale_range: tuple[float, float] = (0.9, 1.1)
    hflip_prob: float = 0.5


def identity_matrix() -> np.ndarray:
    return np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], dtype=np.float64)


def flip_matrix(img_width: float) -> np.ndarray:
    """Mirror about the vertical centreline (pixel-centre convention)."""
    return np.array([[-1.0, 0.0, img_width - 1.0], [0.0, 1.0, 0.0]], dtype=np.float64)


def compose_affine(outer: np.ndarray, inner: np.ndarray) -> np.ndarray:
    """2x3 matrix applying ``inner`` first, then ``outer``."""

    def to3(m: np.ndarray) -> np.ndarray:
        return np.vstack([m, [0.0, 0.0, 1.0]])

    return (to3(outer) @ to3(inner))[:2]


def sample_affine(
    params: AugmentParams, img_height: int, img_width: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw one random 2x3 transform (flip folded in)."""
    flip = rng.uniform() < params.hflip_prob
    angle = rng.uniform(-params.max_rotation_deg, params.max_rotation_deg)
    scale = rng.uniform(*params.scale_range)
    tx = rng.uniform(-params.max_translate, params.max_translate) * img_width
    ty = rng.uniform(-params.max_translate, params.max_translate) * img_height

    center = ((img_width - 1) / 2.0, (img_height - 1) / 2.0)
    matrix = cv2.getRotationMatrix2D(center, angle, scale).astype(np.float64)
    matrix[0, 2] += tx
    matrix[1, 2] += ty
    if flip:
        matrix = compose_affine(matrix, flip_matrix(img_width))
    return matrix


def transform_lane(
    lane: Lane, matrix: np.ndarray, grid: YGrid, img_width: float
) -> Lane | None:
    """Push one lane through the affine and back onto the grid.

    Returns None when no valid rows survive.
    """
    xs_out = np.full(grid.n_points, 0.0)
    valid_out = np.zeros(grid.n_points, dtype=bool)
    for start, stop in valid_runs(lane.valid):
        pts = np.stack([lane.xs[start:stop], grid.ys[start:stop], np.ones(stop - start)])
        warped = matrix @ pts  # (2, run)
        seg_xs, seg_valid = resample_polyline(
            warped[1], warped[0], np.ones(stop - start, dtype=bool), grid.ys
        )
        take = seg_valid & ~valid_out
        xs_out[take] = seg_xs[take]
        valid_out |= seg_valid
    valid_out &= (xs_out >= 0.0) & (xs_out < img_width)
    if not valid_out.any():
        return None
    return Lane(xs=xs_out, valid=valid_out, score=lane.score)


def apply_affine(sample: Sample, matrix: np.ndarray, grid: YGrid) -> Sample:
    """Warp image and labels with one shared matrix."""
    if sample.image is None:
        raise ValueError("cannot augment a sample without an image")
    height, width = sample.size
    warped = cv2.warpAffine(
        sample.image,
        matrix.astype(np.float32),
        (width, height),
        flags=cv2.INTER_LINEAR,
        borderMode=cv2.BORDER_CONSTANT,
        borderValue=0.0,
    )
    lanes = []
    for lane in sample.lanes:
        moved = transform_lane(lane, matrix, grid, float(width))
        if moved is not None:
            lanes.append(moved)
    return Sample(image=warped, lanes=lanes, meta=dict(sample.meta))


def augment(
    sample: Sample,
    rng: np.random.Generator,
    grid: YGrid,
    params: AugmentParams = AugmentParams(),
) -> Sample:
    """Random affine + flip, identical on pixels and labels."""
    height, width = sample.size
    matrix = sample_affine(params, height, width, rng)
    return apply_affine(sample, matrix, grid)
