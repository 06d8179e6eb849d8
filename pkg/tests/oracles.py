"""Independent reference implementations used to cross-check the model.

Everything here recomputes results from module weights with einsum and
plain python loops, never through the modules' own forward paths.
"""

import itertools
import math

import numpy as np
import torch
import torch.nn.functional as F


def maxdiff(a: torch.Tensor, b: torch.Tensor) -> float:
    return float((a.detach() - b.detach()).abs().max())


def einsum_attention(query, keys, attn_module, mask=None):
    """Full multi-head attention recomputed from projection weights.

    query (Lq, C), keys (Lk, C), mask (Lq, Lk) True where allowed.
    Returns (Lq, C), before any residual or norm.
    """
    heads = attn_module.heads
    head_dim = attn_module.head_dim
    q = query @ attn_module.q_proj.weight.t() + attn_module.q_proj.bias
    k = keys @ attn_module.k_proj.weight.t() + attn_module.k_proj.bias
    v = keys @ attn_module.v_proj.weight.t() + attn_module.v_proj.bias
    lq, lk = q.shape[0], k.shape[0]
    q = q.view(lq, heads, head_dim)
    k = k.view(lk, heads, head_dim)
    v = v.view(lk, heads, head_dim)
    scores = torch.einsum("qhd,khd->hqk", q, k) * head_dim**-0.5
    if mask is not None:
        scores = scores.masked_fill(~mask[None], float("-inf"))
    attn = scores.softmax(dim=-1)
    out = torch.einsum("hqk,khd->qhd", attn, v).reshape(lq, heads * head_dim)
    return out @ attn_module.out_proj.weight.t() + attn_module.out_proj.bias


def masked_full_attention_rows(lane_q, feat, block):
    """Row-aligned cross attention reference: full attention over every
    feature token with a block-diagonal row mask.

    lane_q (B, C, H, K), feat (B, C, H, W), block is the module's
    ResidualAttentionBlock.  Returns (B, C, H, K).
    """
    bsz, ch, h, k = lane_q.shape
    w = feat.shape[3]
    out = torch.empty_like(lane_q)
    q_rows = torch.arange(h * k) // k
    k_rows = torch.arange(h * w) // w
    mask = q_rows[:, None] == k_rows[None, :]
    for b in range(bsz):
        q_tokens = lane_q[b].permute(1, 2, 0).reshape(h * k, ch)
        f_tokens = feat[b].permute(1, 2, 0).reshape(h * w, ch)
        attn = einsum_attention(q_tokens, f_tokens, block.attn, mask)
        normed = F.layer_norm(
            q_tokens + attn,
            (ch,),
            block.norm.weight,
            block.norm.bias,
            block.norm.eps,
        )
        out[b] = normed.reshape(h, k, ch).permute(2, 0, 1)
    return out


def column_attention_loop(angle_q, lane_q, block):
    """Anchor-column attention reference: one python-loop attention per
    anchor, each angle token against its own H lane tokens.

    angle_q (B, C, 1, K), lane_q (B, C, H, K) -> (B, C, 1, K).
    """
    bsz, ch, _, k = angle_q.shape
    h = lane_q.shape[2]
    out = torch.empty_like(angle_q)
    for b in range(bsz):
        for anchor in range(k):
            q_token = angle_q[b, :, 0, anchor][None]  # (1, C)
            col = lane_q[b, :, :, anchor].t()  # (H, C)
            attn = einsum_attention(q_token, col, block.attn)
            normed = F.layer_norm(
                q_token + attn,
                (ch,),
                block.norm.weight,
                block.norm.bias,
                block.norm.eps,
            )
            out[b, :, 0, anchor] = normed[0]
    return out


@torch.no_grad()
def deformable_attention_loop(lane_q, feat, ref_points, module):
    """Deformable sampling reference: plain loops over queries and points
    with scalar bilinear interpolation and border clamping.

    Shapes match DeformableLaneAttention.forward.
    """
    bsz, ch, h, k = lane_q.shape
    hf, wf = feat.shape[2], feat.shape[3]
    m = module.n_points
    out = torch.empty_like(lane_q)
    for b in range(bsz):
        tokens = feat[b].permute(1, 2, 0).reshape(hf * wf, ch)
        value = (tokens @ module.value_proj.weight.t() + module.value_proj.bias).reshape(
            hf, wf, ch
        )
        for i in range(h):
            for anchor in range(k):
                t = i * k + anchor
                q = lane_q[b, :, i, anchor]
                offsets = (module.offset_proj.weight @ q + module.offset_proj.bias).view(m, 2)
                logits = module.weight_proj.weight @ q + module.weight_proj.bias
                weights = logits.softmax(dim=0)
                agg = torch.zeros(ch)
                for p in range(m):
                    col = float(ref_points[b, t, 0] + offsets[p, 0])
                    row = float(ref_points[b, t, 1] + offsets[p, 1])
                    col = min(max(col, 0.0), wf - 1.0)
                    row = min(max(row, 0.0), hf - 1.0)
                    c0 = min(int(math.floor(col)), wf - 1)
                    r0 = min(int(math.floor(row)), hf - 1)
                    c1 = min(c0 + 1, wf - 1)
                    r1 = min(r0 + 1, hf - 1)
                    wc = col - c0
                    wr = row - r0
                    sample = (
                        value[r0, c0] * (1 - wc) * (1 - wr)
                        + value[r0, c1] * wc * (1 - wr)
                        + value[r1, c0] * (1 - wc) * wr
                        + value[r1, c1] * wc * wr
                    )
                    agg = agg + weights[p] * sample
                attended = module.out_proj.weight @ agg + module.out_proj.bias
                normed = F.layer_norm(
                    (q + attended)[None],
                    (ch,),
                    module.norm.weight,
                    module.norm.bias,
                    module.norm.eps,
                )
                out[b, :, i, anchor] = normed[0]
    return out


def brute_force_min_cost(cost: np.ndarray) -> float:
    """Minimum assignment cost by enumerating every injective map."""
    n_gt, n_pred = cost.shape
    best = math.inf
    for cols in itertools.permutations(range(n_pred), n_gt):
        total = sum(cost[g, c] for g, c in enumerate(cols))
        best = min(best, total)
    return best
