"""Model hyperparameters shared by the decoder, profiler and CLI."""

from __future__ import annotations

from dataclasses import dataclass

from ..geometry import YGrid, sample_y_grid


@dataclass
class ModelConfig:
    """Shapes and knobs of the sparse-anchor lane detector.

    The feature map produced by the backbone has one cell per
    ``2 ** len(backbone_widths)`` input pixels, so the image sides must
    divide evenly by that stride.
    """

    img_height: int = 320
    img_width: int = 800
    n_points: int = 72
    num_anchors: int = 20
    rotation_ratio: float = 0.6
    channels: int = 64
    heads: int = 4
    num_sample_points: int = 25
    backbone_widths: tuple[int, ...] | None = None
    positional_encoding: bool = True
    stages: int = 2
    score_threshold: float = 0.5

    def __post_init__(self):
        if self.backbone_widths is None:
            self.backbone_widths = (16, 32, 64, self.channels)
        else:
            self.backbone_widths = tuple(int(w) for w in self.backbone_widths)
        if self.backbone_widths[-1] != self.channels:
            raise ValueError(
                f"last backbone width {self.backbone_widths[-1]} must equal channels {self.channels}"
            )
        if self.channels % self.heads != 0:
            raise ValueError(f"channels {self.channels} not divisible by heads {self.heads}")
        if self.positional_encoding and self.channels % 4 != 0:
            raise ValueError("positional encoding needs channels divisible by 4")
        stride = self.feature_stride
        if self.img_height % stride or self.img_width % stride:
            raise ValueError(
                f"image {self.img_height}x{self.img_width} must divide by backbone stride {stride}"
            )
        if self.n_points < 2:
            raise ValueError(f"n_points must be >= 2, got {self.n_points}")
        if self.num_anchors < 1:
            raise ValueError(f"num_anchors must be >= 1, got {self.num_anchors}")
        if not 0.0 < self.rotation_ratio <= 1.0:
            raise ValueError(f"rotation_ratio must be in (0, 1], got {self.rotation_ratio}")
        if self.stages not in (1, 2):
            raise ValueError(f"stages must be 1 or 2, got {self.stages}")
        if self.num_sample_points < 1:
            raise ValueError(f"num_sample_points must be >= 1, got {self.num_sample_points}")
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ValueError(f"score_threshold must be in [0, 1], got {self.score_threshold}")

    @property
    def feature_stride(self) -> int:
        return 2 ** len(self.backbone_widths)

    @property
    def feature_height(self) -> int:
        return self.img_height // self.feature_stride

    @property
    def feature_width(self) -> int:
        return self.img_width // self.feature_stride

    def grid(self) -> YGrid:
        return sample_y_grid(self.n_points, float(self.img_height))
