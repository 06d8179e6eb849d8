"""Compact convolutional backbone producing one feature map."""

from __future__ import annotations

import torch
from torch import nn


def _norm_groups(channels: int) -> int:
    for groups in (8, 4, 2, 1):
        if channels % groups == 0:
            return groups
    return 1


class ConvBackbone(nn.Module):
    """Stack of stride-2 conv stages; output stride is 2 ** len(widths).

    Group normalisation keeps the forward pass identical in train and eval
    mode, which the training loop relies on when it reports metrics.
    """

    def __init__(self, widths: tuple[int, ...], in_channels: int = 3):
        super().__init__()
        stages = []
        prev = in_channels
        for width in widths:
            stages.append(
                nn.Sequential(
                    nn.Conv2d(prev, width, kernel_size=3, stride=2, padding=1),
                    nn.GroupNorm(_norm_groups(width), width),
                    nn.ReLU(inplace=True),
                )
            )
            prev = width
        self.stages = nn.Sequential(*stages)
        self.out_channels = prev

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) -> (B, C, H / stride, W / stride)."""
        return self.stages(images)
