"""Common container for one annotated image."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import Lane


@dataclass
class Sample:
    """An image (float32 HxWx3 in [0, 1], or None while unloaded) plus lanes."""

    image: np.ndarray | None
    lanes: list[Lane]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.image is not None:
            if self.image.ndim != 3 or self.image.shape[2] != 3:
                raise ValueError(f"image must be HxWx3, got shape {self.image.shape}")
            if self.image.dtype != np.float32:
                self.image = self.image.astype(np.float32)

    @property
    def size(self) -> tuple[int, int]:
        """(height, width) of the image."""
        if self.image is None:
            raise ValueError("sample has no image loaded")
        return self.image.shape[0], self.image.shape[1]
