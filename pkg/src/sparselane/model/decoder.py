"""Two-stage sparse-anchor lane decoder.

Stage 1 reads the feature map through row-aligned cross attention, predicts
one angle and one offset vector per anchor, and materialises K candidate
lanes.  Stage 2 starts from fresh queries, folds in the stage-1 query
states, and refines the candidates by sampling the feature map around the
stage-1 lane positions with deformable attention.  Both stages share the
same prediction head structure but keep independent weights, and both are
supervised during training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from ..geometry import Lane, init_anchor_centers
from .attention import (
    AnchorColumnAttention,
    AngleSelfAttention,
    DeformableLaneAttention,
    LaneSelfAttention,
    RowAlignedCrossAttention,
    sinusoidal_position_encoding,
)
from .backbone import ConvBackbone
from .config import ModelConfig

MAX_ANGLE = math.pi / 3.0
ANGLE_MARGIN = 1e-6
QUERY_INIT_STD = 0.02


@dataclass
class QueryState:
    """Paired query tensors: lane (B, C, H, K) and angle (B, C, 1, K)."""

    lane: torch.Tensor
    angle: torch.Tensor


@dataclass
class DecoderOutput:
    """One stage's predictions for a batch (all tensors batched)."""

    angle_logits: torch.Tensor  # (B, K)
    angles: torch.Tensor  # (B, K) radians in (-pi/3, pi/3)
    offsets: torch.Tensor  # (B, N, K) pixels
    score_logits: torch.Tensor  # (B, K)
    scores: torch.Tensor  # (B, K) in (0, 1)
    anchor_xs: torch.Tensor  # (B, N, K) rotated anchor positions
    lane_xs: torch.Tensor  # (B, N, K) anchor + offsets
    lane_valid: torch.Tensor  # (B, N, K) bool, inside image horizontally

    def lanes(self, batch_index: int = 0, threshold: float | None = None) -> list[Lane]:
        """Materialise per-anchor lanes, optionally dropping low scores."""
        xs = self.lane_xs[batch_index].detach().cpu().numpy()
        valid = self.lane_valid[batch_index].detach().cpu().numpy()
        scores = self.scores[batch_index].detach().cpu().numpy()
        out = []
        for k in range(xs.shape[1]):
            if threshold is not None and scores[k] < threshold:
                continue
            out.append(Lane(xs=xs[:, k], valid=valid[:, k], score=float(scores[k])))
        return out


def coordinate_map(
    lane_xs: torch.Tensor, feat_height: int, feat_width: int, img_width: float
) -> torch.Tensor:
    """Project candidate lanes onto feature-map reference points.

    For feature row i the matching lane point is row round(i * N / H) of
    the lane table (round half up, clamped to the table), and its x is
    rescaled from image to feature pixels and clamped inside the map.

    Args:
        lane_xs: (B, N, K) lane x positions in image pixels.
        feat_height / feat_width: feature-map size (H, W).
        img_width: image width in pixels.

    Returns:
        (B, H*K, 2) reference points (col, row) in feature pixels, query
        tokens flattened row-major.
    """
    bsz, n_points, k = lane_xs.shape
    rows = torch.arange(feat_height, device=lane_xs.device)
    # round-half-up of i * N / H in exact integer arithmetic
    idx = (2 * rows * n_points + feat_height) // (2 * feat_height)
    idx = idx.clamp(0, n_points - 1)
    cols = lane_xs[:, idx, :] * (feat_width / img_width)  # (B, H, K)
    cols = cols.clamp(0.0, feat_width - 1.0)
    rows_f = rows.to(lane_xs.dtype)[None, :, None].expand(bsz, feat_height, k)
    ref = torch.stack((cols, rows_f), dim=-1)  # (B, H, K, 2)
    return ref.reshape(bsz, feat_height * k, 2)


class DynamicLanePredictor(nn.Module):
    """Turns query states into angles, offsets and confidences.

    Angles come from a two-layer perceptron on each angle token, squashed
    into (-pi/3, pi/3) by a scaled sigmoid.  Offsets come from one linear
    layer over each anchor's flattened lane-query column.  Confidence is a
    linear read-out of the column's mean token.
    """

    def __init__(self, channels: int, feat_height: int, n_points: int):
        super().__init__()
        self.angle_fc1 = nn.Linear(channels, channels)
        self.angle_fc2 = nn.Linear(channels, 1)
        self.offset_fc = nn.Linear(channels * feat_height, n_points)
        self.score_fc = nn.Linear(channels, 1)

    def forward(self, lane_q: torch.Tensor, angle_q: torch.Tensor) -> dict[str, torch.Tensor]:
        """lane_q (B, C, H, K), angle_q (B, C, 1, K) -> prediction tensors."""
        bsz, ch, h, k = lane_q.shape
        angle_tokens = angle_q.squeeze(2).permute(0, 2, 1)  # (B, K, C)
        angle_logits = self.angle_fc2(torch.relu(self.angle_fc1(angle_tokens))).squeeze(-1)
        # The scaled sigmoid maps onto the open interval in exact arithmetic,
        # but float32 sigmoid saturates to 0/1 for large logits; the clamp
        # keeps the angle strictly inside (-MAX_ANGLE, MAX_ANGLE).
        angles = (2.0 * torch.sigmoid(angle_logits) - 1.0) * MAX_ANGLE
        angles = angles.clamp(-MAX_ANGLE + ANGLE_MARGIN, MAX_ANGLE - ANGLE_MARGIN)

        columns = lane_q.permute(0, 3, 1, 2).reshape(bsz, k, ch * h)
        offsets = self.offset_fc(columns).permute(0, 2, 1)  # (B, N, K)

        score_logits = self.score_fc(lane_q.mean(dim=2).permute(0, 2, 1)).squeeze(-1)
        return {
            "angle_logits": angle_logits,
            "angles": angles,
            "offsets": offsets,
            "score_logits": score_logits,
            "scores": torch.sigmoid(score_logits),
        }


def rotate_anchors_torch(
    angles: torch.Tensor,
    centers: torch.Tensor,
    ys: torch.Tensor,
    img_height: float,
    rotation_ratio: float,
) -> torch.Tensor:
    """Differentiable twin of geometry.rotate_anchor for a batch of angles.

    angles (B, K), centers (K,), ys (N,) -> anchor x positions (B, N, K).
    """
    y_rot = rotation_ratio * img_height
    return centers[None, None, :] + (y_rot - ys)[None, :, None] * torch.tan(angles)[:, None, :]


class LaneDecoder(nn.Module):
    """Backbone plus the two decoding stages."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        ch, heads = cfg.channels, cfg.heads
        h, k = cfg.feature_height, cfg.num_anchors
        self.backbone = ConvBackbone(cfg.backbone_widths)

        def query_pair() -> nn.ParameterDict:
            return nn.ParameterDict(
                {
                    "lane": nn.Parameter(torch.randn(ch, h, k) * QUERY_INIT_STD),
                    "angle": nn.Parameter(torch.randn(ch, 1, k) * QUERY_INIT_STD),
                }
            )

        self.queries = nn.ModuleDict({"stage1": query_pair(), "stage2": query_pair()})
        self.lane_sa = nn.ModuleDict(
            {"stage1": LaneSelfAttention(ch, heads), "stage2": LaneSelfAttention(ch, heads)}
        )
        self.angle_sa = nn.ModuleDict(
            {"stage1": AngleSelfAttention(ch, heads), "stage2": AngleSelfAttention(ch, heads)}
        )
        self.row_attn = RowAlignedCrossAttention(ch, heads)
        self.column_attn = nn.ModuleDict(
            {"stage1": AnchorColumnAttention(ch, heads), "stage2": AnchorColumnAttention(ch, heads)}
        )
        self.deform_attn = DeformableLaneAttention(ch, cfg.num_sample_points)
        self.predictors = nn.ModuleDict(
            {
                "stage1": DynamicLanePredictor(ch, h, cfg.n_points),
                "stage2": DynamicLanePredictor(ch, h, cfg.n_points),
            }
        )

        grid = cfg.grid()
        self.register_buffer(
            "anchor_centers",
            torch.from_numpy(init_anchor_centers(k, cfg.img_width)).float(),
            persistent=False,
        )
        self.register_buffer("grid_ys", torch.from_numpy(grid.ys).float(), persistent=False)
        if cfg.positional_encoding:
            self.register_buffer(
                "pos_enc",
                sinusoidal_position_encoding(ch, h, cfg.feature_width),
                persistent=False,
            )
        else:
            self.pos_enc = None

    def extract_features(self, images: torch.Tensor) -> torch.Tensor:
        """(B, 3, H_img, W_img) -> (B, C, H, W) backbone features."""
        expected = (self.cfg.img_height, self.cfg.img_width)
        if tuple(images.shape[-2:]) != expected:
            raise ValueError(f"expected {expected} images, got {tuple(images.shape[-2:])}")
        return self.backbone(images)

    def init_queries(self, stage: int, batch_size: int) -> QueryState:
        """Fresh learned queries for one stage, expanded over the batch."""
        pair = self.queries[f"stage{stage}"]
        lane = pair["lane"].unsqueeze(0).expand(batch_size, -1, -1, -1)
        angle = pair["angle"].unsqueeze(0).expand(batch_size, -1, -1, -1)
        return QueryState(lane=lane, angle=angle)

    def self_attend(self, qs: QueryState, stage: int) -> QueryState:
        key = f"stage{stage}"
        return QueryState(
            lane=self.lane_sa[key](qs.lane), angle=self.angle_sa[key](qs.angle)
        )

    @staticmethod
    def fuse_stage2(stage2_sa: QueryState, stage1_state: QueryState) -> QueryState:
        """Merge stage-2 self-attended queries with stage-1 states (add)."""
        return QueryState(
            lane=stage2_sa.lane + stage1_state.lane,
            angle=stage2_sa.angle + stage1_state.angle,
        )

    def _predict(self, stage: int, lane_q: torch.Tensor, angle_q: torch.Tensor) -> DecoderOutput:
        head = self.predictors[f"stage{stage}"](lane_q, angle_q)
        anchor_xs = rotate_anchors_torch(
            head["angles"],
            self.anchor_centers.to(lane_q.dtype),
            self.grid_ys.to(lane_q.dtype),
            float(self.cfg.img_height),
            self.cfg.rotation_ratio,
        )
        lane_xs = anchor_xs + head["offsets"]
        lane_valid = (lane_xs >= 0.0) & (lane_xs < float(self.cfg.img_width))
        return DecoderOutput(
            angle_logits=head["angle_logits"],
            angles=head["angles"],
            offsets=head["offsets"],
            score_logits=head["score_logits"],
            scores=head["scores"],
            anchor_xs=anchor_xs,
            lane_xs=lane_xs,
            lane_valid=lane_valid,
        )

    def forward(self, images: torch.Tensor) -> list[DecoderOutput]:
        """Run all configured stages; the last output is the final one."""
        bsz = images.shape[0]
        feat = self.extract_features(images)
        if self.pos_enc is not None:
            feat = feat + self.pos_enc.to(feat.dtype)[None]

        qs1 = self.self_attend(self.init_queries(1, bsz), stage=1)
        lane1 = self.row_attn(qs1.lane, feat)
        angle1 = self.column_attn["stage1"](qs1.angle, lane1)
        out1 = self._predict(1, lane1, angle1)
        if self.cfg.stages == 1:
            return [out1]

        qs2 = self.self_attend(self.init_queries(2, bsz), stage=2)
        fused = self.fuse_stage2(qs2, QueryState(lane=lane1, angle=angle1))
        ref = coordinate_map(
            out1.lane_xs.detach(),
            self.cfg.feature_height,
            self.cfg.feature_width,
            float(self.cfg.img_width),
        )
        lane2 = self.deform_attn(fused.lane, feat, ref)
        angle2 = self.column_attn["stage2"](fused.angle, lane2)
        out2 = self._predict(2, lane2, angle2)
        return [out1, out2]


def build_model(cfg: ModelConfig, seed: int | None = None) -> LaneDecoder:
    """Construct a decoder; with a seed, initialisation is reproducible."""
    if seed is not None:
        torch.manual_seed(seed)
    return LaneDecoder(cfg)
