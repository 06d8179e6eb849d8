"""Attention blocks of the lane decoder.

Lane queries form a (B, C, H, K) tensor: one C-dim token per feature-map
row per anchor.  Angle queries form (B, C, 1, K): one token per anchor.
Every block wraps its attention in a residual connection followed by layer
normalisation over the channel axis.

The two cross-attention patterns that keep the decoder cheap:

* row-aligned attention lets each lane-query row see only the matching
  feature-map row, dropping the key set from H*W to W per query;
* deformable attention lets each lane-query token sample a handful of
  learned offsets around its anchor's current position instead of
  attending to the whole map.
"""

from __future__ import annotations

import math

import torch
from torch import nn


def sinusoidal_position_encoding(
    channels: int,
    height: int,
    width: int,
    temperature: float = 10000.0,
    dtype: torch.dtype = torch.float32,
    device=None,
) -> torch.Tensor:
    """Fixed 2-d sin/cos encoding, (C, H, W).

    The first half of the channels encodes the row position, the second
    half the column position, each as interleaved sine/cosine waves over
    geometrically spaced frequencies.
    """
    if channels % 4 != 0:
        raise ValueError(f"channels must divide by 4, got {channels}")
    half = channels // 2
    ys = (torch.arange(height, dtype=dtype, device=device) + 0.5) / height * (2.0 * math.pi)
    xs = (torch.arange(width, dtype=dtype, device=device) + 0.5) / width * (2.0 * math.pi)
    dim_t = temperature ** (
        2.0 * (torch.arange(half, dtype=dtype, device=device) // 2) / half
    )
    pos_y = ys[:, None] / dim_t  # (H, half)
    pos_x = xs[:, None] / dim_t  # (W, half)
    pos_y = torch.stack((pos_y[:, 0::2].sin(), pos_y[:, 1::2].cos()), dim=2).flatten(1)
    pos_x = torch.stack((pos_x[:, 0::2].sin(), pos_x[:, 1::2].cos()), dim=2).flatten(1)
    pos = torch.empty(channels, height, width, dtype=dtype, device=device)
    pos[:half] = pos_y.t()[:, :, None]
    pos[half:] = pos_x.t()[:, None, :]
    return pos


class MultiHeadAttention(nn.Module):
    """Plain scaled dot-product attention with separate q/k/v projections."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.scale = self.head_dim**-0.5
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def forward(
        self,
        query: torch.Tensor,
        key: torch.Tensor,
        value: torch.Tensor,
        mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """query (B, Lq, C), key/value (B, Lk, C) -> (B, Lq, C).

        ``mask`` is boolean with True where attention is permitted, shaped
        (Lq, Lk) or (B, Lq, Lk).
        """
        bsz, lq, _ = query.shape
        lk = key.shape[1]
        q = self.q_proj(query).view(bsz, lq, self.heads, self.head_dim).transpose(1, 2)
        k = self.k_proj(key).view(bsz, lk, self.heads, self.head_dim).transpose(1, 2)
        v = self.v_proj(value).view(bsz, lk, self.heads, self.head_dim).transpose(1, 2)
        attn = torch.matmul(q, k.transpose(-2, -1)) * self.scale  # (B, h, Lq, Lk)
        if mask is not None:
            mask = mask.to(torch.bool)
            if mask.ndim == 2:
                mask = mask[None, None]
            elif mask.ndim == 3:
                mask = mask[:, None]
            else:
                raise ValueError(f"mask must be 2-d or 3-d, got {mask.ndim}-d")
            attn = attn.masked_fill(~mask, torch.finfo(attn.dtype).min)
        attn = attn.softmax(dim=-1)
        out = torch.matmul(attn, v).transpose(1, 2).reshape(bsz, lq, self.dim)
        return self.out_proj(out)


class ResidualAttentionBlock(nn.Module):
    """norm(query + attention(query, memory)) with shared key/value memory."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.attn = MultiHeadAttention(dim, heads)
        self.norm = nn.LayerNorm(dim)

    def forward(
        self, query: torch.Tensor, memory: torch.Tensor, mask: torch.Tensor | None = None
    ) -> torch.Tensor:
        return self.norm(query + self.attn(query, memory, memory, mask))


def _rows_to_tokens(lane_q: torch.Tensor) -> torch.Tensor:
    """(B, C, H, K) -> (B*H, K, C): anchors become tokens within each row."""
    bsz, ch, h, k = lane_q.shape
    return lane_q.permute(0, 2, 3, 1).reshape(bsz * h, k, ch)


def _tokens_to_rows(tokens: torch.Tensor, bsz: int, h: int) -> torch.Tensor:
    bh, k, ch = tokens.shape
    return tokens.reshape(bsz, h, k, ch).permute(0, 3, 1, 2)


def _anchors_to_tokens(lane_q: torch.Tensor) -> torch.Tensor:
    """(B, C, H, K) -> (B*K, H, C): rows become tokens within each anchor."""
    bsz, ch, h, k = lane_q.shape
    return lane_q.permute(0, 3, 2, 1).reshape(bsz * k, h, ch)


class LaneSelfAttention(nn.Module):
    """Anchors exchange information within each grid row."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.block = ResidualAttentionBlock(dim, heads)

    def forward(self, lane_q: torch.Tensor) -> torch.Tensor:
        bsz, _, h, _ = lane_q.shape
        tokens = _rows_to_tokens(lane_q)
        return _tokens_to_rows(self.block(tokens, tokens), bsz, h)


class AngleSelfAttention(nn.Module):
    """Angle tokens exchange information across anchors."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.block = ResidualAttentionBlock(dim, heads)

    def forward(self, angle_q: torch.Tensor) -> torch.Tensor:
        tokens = angle_q.squeeze(2).permute(0, 2, 1)  # (B, K, C)
        out = self.block(tokens, tokens)
        return out.permute(0, 2, 1).unsqueeze(2)


class RowAlignedCrossAttention(nn.Module):
    """Each lane-query row attends only to the matching feature-map row.

    Equivalent to full cross attention over all H*W feature tokens under a
    mask that forbids leaving one's own row, at 1/H of the dot-product
    cost.
    """

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.block = ResidualAttentionBlock(dim, heads)

    def forward(self, lane_q: torch.Tensor, feat: torch.Tensor) -> torch.Tensor:
        """lane_q (B, C, H, K), feat (B, C, H, W) -> (B, C, H, K)."""
        if lane_q.shape[2] != feat.shape[2]:
            raise ValueError(
                f"lane queries have {lane_q.shape[2]} rows, feature map {feat.shape[2]}"
            )
        bsz, _, h, _ = lane_q.shape
        w = feat.shape[3]
        q = _rows_to_tokens(lane_q)
        kv = feat.permute(0, 2, 3, 1).reshape(bsz * h, w, feat.shape[1])
        return _tokens_to_rows(self.block(q, kv), bsz, h)


class AnchorColumnAttention(nn.Module):
    """Each angle token attends to its own anchor's column of lane tokens."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.block = ResidualAttentionBlock(dim, heads)

    def forward(self, angle_q: torch.Tensor, lane_q: torch.Tensor) -> torch.Tensor:
        """angle_q (B, C, 1, K), lane_q (B, C, H, K) -> (B, C, 1, K)."""
        if angle_q.shape[3] != lane_q.shape[3]:
            raise ValueError(
                f"angle queries cover {angle_q.shape[3]} anchors, lane queries {lane_q.shape[3]}"
            )
        bsz, ch, _, k = angle_q.shape
        q = angle_q.permute(0, 3, 2, 1).reshape(bsz * k, 1, ch)
        kv = _anchors_to_tokens(lane_q)
        out = self.block(q, kv)  # (B*K, 1, C)
        return out.reshape(bsz, k, 1, ch).permute(0, 3, 2, 1)


class DeformableLaneAttention(nn.Module):
    """Lane tokens sample M learned offsets around their anchor's position.

    For each query token a linear layer predicts M 2-d offsets (zero at
    initialisation, so sampling starts exactly on the reference points) and
    a second linear layer produces softmax weights over the M samples.
    Values are bilinearly interpolated from the projected feature map with
    border clamping.
    """

    def __init__(self, dim: int, n_points: int):
        super().__init__()
        if n_points < 1:
            raise ValueError(f"n_points must be >= 1, got {n_points}")
        self.dim = dim
        self.n_points = n_points
        self.value_proj = nn.Linear(dim, dim)
        self.offset_proj = nn.Linear(dim, 2 * n_points)
        self.weight_proj = nn.Linear(dim, n_points)
        self.out_proj = nn.Linear(dim, dim)
        self.norm = nn.LayerNorm(dim)
        self._reset_parameters()

    def _reset_parameters(self):
        nn.init.zeros_(self.offset_proj.weight)
        nn.init.zeros_(self.offset_proj.bias)
        nn.init.zeros_(self.weight_proj.weight)
        nn.init.zeros_(self.weight_proj.bias)
        nn.init.xavier_uniform_(self.value_proj.weight)
        nn.init.zeros_(self.value_proj.bias)
        nn.init.xavier_uniform_(self.out_proj.weight)
        nn.init.zeros_(self.out_proj.bias)

    def forward(
        self, lane_q: torch.Tensor, feat: torch.Tensor, ref_points: torch.Tensor
    ) -> torch.Tensor:
        """lane_q (B, C, H, K), feat (B, C, Hf, Wf), ref (B, H*K, 2) -> (B, C, H, K).

        ``ref_points[..., 0]`` is the column and ``ref_points[..., 1]`` the
        row of each query's reference, in feature-map pixels, query tokens
        flattened row-major (row index varies slowest).
        """
        bsz, ch, h, k = lane_q.shape
        hf, wf = feat.shape[2], feat.shape[3]
        nq = h * k
        if ref_points.shape != (bsz, nq, 2):
            raise ValueError(f"ref_points must be {(bsz, nq, 2)}, got {tuple(ref_points.shape)}")

        q = lane_q.permute(0, 2, 3, 1).reshape(bsz, nq, ch)
        offsets = self.offset_proj(q).view(bsz, nq, self.n_points, 2)
        weights = self.weight_proj(q).softmax(dim=-1)  # (B, Q, M)

        loc = ref_points[:, :, None, :] + offsets  # (B, Q, M, 2)
        col = loc[..., 0].clamp(0.0, wf - 1.0)
        row = loc[..., 1].clamp(0.0, hf - 1.0)

        value = self.value_proj(feat.permute(0, 2, 3, 1).reshape(bsz, hf * wf, ch))

        c0 = col.floor().long().clamp(0, wf - 1)
        r0 = row.floor().long().clamp(0, hf - 1)
        c1 = (c0 + 1).clamp(max=wf - 1)
        r1 = (r0 + 1).clamp(max=hf - 1)
        wc = (col - c0.to(col.dtype)).unsqueeze(-1)  # (B, Q, M, 1)
        wr = (row - r0.to(row.dtype)).unsqueeze(-1)

        def gather(rows: torch.Tensor, cols: torch.Tensor) -> torch.Tensor:
            flat = (rows * wf + cols).reshape(bsz, nq * self.n_points, 1).expand(-1, -1, ch)
            return torch.gather(value, 1, flat).view(bsz, nq, self.n_points, ch)

        v00 = gather(r0, c0)
        v01 = gather(r0, c1)
        v10 = gather(r1, c0)
        v11 = gather(r1, c1)
        sampled = (
            v00 * (1 - wc) * (1 - wr)
            + v01 * wc * (1 - wr)
            + v10 * (1 - wc) * wr
            + v11 * wc * wr
        )  # (B, Q, M, C)

        out = self.out_proj((sampled * weights.unsqueeze(-1)).sum(dim=2))
        out = self.norm(q + out)
        return out.reshape(bsz, h, k, ch).permute(0, 3, 1, 2)
