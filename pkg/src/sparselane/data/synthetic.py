"""Procedural road scenes with known lane geometry.

Each scene is a noisy road-like background with 2 to 5 bright, gently
curved lane strips.  Lanes are quadratics in y, guaranteed non-crossing
inside the image, and the exported labels are sampled from the same
analytic curves that drive the renderer, so ground truth is exact by
construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from ..geometry import Lane, YGrid, sample_y_grid
from .sample import Sample

# Strips brighter than this stand out from any background the generator
# produces; used by tests to recover strip pixels.
STRIP_COLORS = (
    (0.92, 0.92, 0.92),  # white paint
    (0.95, 0.86, 0.35),  # yellow paint
)

_MAX_RESAMPLE_TRIES = 100


@dataclass
class SynthConfig:
    """Knobs for the scene generator."""

    img_height: int = 256
    img_width: int = 256
    n_points: int = 72
    min_lanes: int = 2
    max_lanes: int = 5
    strip_width: float = 5.0
    min_separation: float = 26.0
    max_slope: float = 0.3
    max_curvature: float = 0.12
    horizon_range: tuple[float, float] = (0.08, 0.3)
    base_brightness: float = 0.32
    noise_std: float = 0.045
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.min_lanes <= self.max_lanes:
            raise ValueError("need 1 <= min_lanes <= max_lanes")
        if self.min_separation <= self.strip_width:
            raise ValueError("min_separation must exceed strip_width")
        lo, hi = self.horizon_range
        if not 0.0 <= lo <= hi < 1.0:
            raise ValueError("horizon_range must satisfy 0 <= low <= high < 1")

    def grid(self) -> YGrid:
        return sample_y_grid(self.n_points, float(self.img_height))


def _lane_x(base: float, slope: float, curve: float, ys: np.ndarray, height: float) -> np.ndarray:
    """Quadratic lane centerline, anchored at the bottom edge."""
    t = (height - ys) / height  # 0 at the bottom, 1 at the top
    return base + slope * height * t + curve * height * t * t


def _sample_lane_params(cfg: SynthConfig, rng: np.random.Generator) -> tuple[np.ndarray, ...]:
    """Draw non-crossing lane curves, falling back to parallel lanes."""
    n = int(rng.integers(cfg.min_lanes, cfg.max_lanes + 1))
    margin = cfg.min_separation
    free = cfg.img_width - 2 * margin - (n - 1) * cfg.min_separation
    if free <= 0:
        raise ValueError("image too narrow for the configured lane separation")
    offsets = np.sort(rng.uniform(0.0, free, size=n))
    bases = margin + offsets + np.arange(n) * cfg.min_separation

    ys = np.arange(cfg.img_height, dtype=np.float64)
    damp = 1.0
    for _ in range(_MAX_RESAMPLE_TRIES):
        shared_slope = rng.uniform(-cfg.max_slope, cfg.max_slope)
        slopes = shared_slope + rng.uniform(-cfg.max_slope, cfg.max_slope, size=n) * 0.5 * damp
        curves = rng.uniform(-cfg.max_curvature, cfg.max_curvature, size=n) * damp
        xs = np.stack(
            [_lane_x(b, s, c, ys, cfg.img_height) for b, s, c in zip(bases, slopes, curves)]
        )
        gaps = np.diff(xs, axis=0)
        if gaps.size == 0 or gaps.min() > cfg.strip_width + 2.0:
            return bases, slopes, curves
        damp *= 0.7
    # fully parallel lanes can never cross
    slopes = np.full(n, shared_slope)
    curves = np.zeros(n)
    return bases, slopes, curves


def _render_background(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    h, w = cfg.img_height, cfg.img_width
    rows = np.linspace(0.0, 1.0, h)[:, None]
    shade = cfg.base_brightness + 0.08 * rows  # slightly brighter toward the camera
    noise = uniform_filter(rng.normal(0.0, cfg.noise_std, size=(h, w)), size=5)
    gray = np.clip(shade + noise, 0.0, 1.0)
    img = np.stack([gray, gray, np.clip(gray * 1.04, 0.0, 1.0)], axis=2)
    return img.astype(np.float32)


def _strip_alpha(center_xs: np.ndarray, row_mask: np.ndarray, width: float, w: int) -> np.ndarray:
    """Per-pixel coverage of one strip: 1 inside, linear 1 px falloff."""
    cols = np.arange(w, dtype=np.float64)[None, :]
    dist = np.abs(cols - center_xs[:, None])
    alpha = np.clip(width / 2.0 + 0.5 - dist, 0.0, 1.0)
    alpha[~row_mask] = 0.0
    return alpha


def generate_scene(cfg: SynthConfig, rng: np.random.Generator) -> Sample:
    """Render one scene and its exact grid-sampled labels.

    Content is a pure function of the generator state, so two calls with
    generators in the same state produce bit-identical images and labels.
    """
    bases, slopes, curves = _sample_lane_params(cfg, rng)
    horizon = rng.uniform(*cfg.horizon_range) * cfg.img_height
    image = _render_background(cfg, rng)

    pixel_ys = np.arange(cfg.img_height, dtype=np.float64)
    grid = cfg.grid()
    lanes = []
    for i, (base, slope, curve) in enumerate(zip(bases, slopes, curves)):
        color = np.array(STRIP_COLORS[int(rng.integers(len(STRIP_COLORS)))], dtype=np.float64)
        center = _lane_x(base, slope, curve, pixel_ys, cfg.img_height)
        row_mask = pixel_ys >= horizon
        alpha = _strip_alpha(center, row_mask, cfg.strip_width, cfg.img_width)
        image = (image * (1.0 - alpha[..., None]) + color[None, None, :] * alpha[..., None]).astype(
            np.float32
        )

        label_xs = _lane_x(base, slope, curve, grid.ys, cfg.img_height)
        valid = (grid.ys >= horizon) & (label_xs >= 0.0) & (label_xs < cfg.img_width)
        if valid.any():
            lanes.append(Lane(xs=label_xs, valid=valid))

    return Sample(image=image, lanes=lanes, meta={"horizon": float(horizon)})


def make_dataset(cfg: SynthConfig, count: int) -> list[Sample]:
    """Deterministic list of scenes; scene i depends only on (seed, i)."""
    root = np.random.SeedSequence(cfg.seed)
    samples = []
    for i, child in enumerate(root.spawn(count)):
        sample = generate_scene(cfg, np.random.default_rng(child))
        sample.meta["id"] = f"synth-{i:05d}"
        samples.append(sample)
    return samples
