"""Analytic multiply-accumulate counts for the decoder's attention designs.

One MAC is one multiply plus one accumulate.  Counts cover matrix products
only (projections, attention score and value products, convolutions,
prediction heads); normalisation, softmax and activations are excluded,
matching how attention complexity is usually quoted.

The point of the exercise: full cross attention between K*H lane tokens
and an H*W feature map costs 2*K*H^2*W*C in score/value products, while
row-aligned attention costs 2*K*H*W*C, exactly H times less.  Deformable
refinement is linear in K*H*M*C.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .model.config import ModelConfig

VARIANTS = ("vanilla_cross", "hpa", "lpa", "full_model")


@dataclass
class MacReport:
    """Per-term MAC counts for one attention variant or the whole model."""

    variant: str
    terms: dict[str, int]
    config: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.terms.values())

    def to_key_values(self) -> dict:
        out = {"variant": self.variant, "total": self.total}
        out.update(self.terms)
        return out

    def to_text(self) -> str:
        lines = [f"MAC report: {self.variant}", "-" * 40]
        for name, count in self.terms.items():
            lines.append(f"{name:<24} {count:>18,}")
        lines.append(f"{'total':<24} {self.total:>18,}")
        cfg = ", ".join(f"{k}={v}" for k, v in self.config.items())
        lines.append(f"config: {cfg}")
        return "\n".join(lines) + "\n"


def _attention_projections(n_q: int, n_kv: int, ch: int) -> dict[str, int]:
    return {
        "q_proj": n_q * ch * ch,
        "kv_proj": 2 * n_kv * ch * ch,
        "out_proj": n_q * ch * ch,
    }


def _self_attention_macs(tokens: int, groups: int, ch: int) -> int:
    """Residual self-attention over ``groups`` independent token sets."""
    proj = 4 * groups * tokens * ch * ch
    attn = 2 * groups * tokens * tokens * ch
    return proj + attn


def _predictor_macs(cfg: ModelConfig) -> int:
    k, ch, h, n = cfg.num_anchors, cfg.channels, cfg.feature_height, cfg.n_points
    angle = k * (ch * ch + ch)
    offsets = k * ch * h * n
    score = k * ch
    return angle + offsets + score


def _backbone_macs(cfg: ModelConfig) -> int:
    total = 0
    in_ch = 3
    height, width = cfg.img_height, cfg.img_width
    for out_ch in cfg.backbone_widths:
        height //= 2
        width //= 2
        total += height * width * out_ch * in_ch * 9  # 3x3 kernels
        in_ch = out_ch
    return total


def count_macs(cfg: ModelConfig, variant: str) -> MacReport:
    """Exact MAC count for one attention variant or the full model.

    Variants:
        vanilla_cross: hypothetical full cross attention of all K*H lane
            tokens over all H*W feature tokens.
        hpa: row-aligned cross attention (each row sees only its own
            feature row).
        lpa: deformable refinement sampling M points per lane token.
        full_model: backbone, both decoder stages and prediction heads.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}, pick one of {VARIANTS}")
    ch, k = cfg.channels, cfg.num_anchors
    h, w = cfg.feature_height, cfg.feature_width
    m = cfg.num_sample_points
    echo = {
        "channels": ch,
        "num_anchors": k,
        "feature_height": h,
        "feature_width": w,
        "n_points": cfg.n_points,
        "num_sample_points": m,
    }

    if variant == "vanilla_cross":
        terms = _attention_projections(k * h, h * w, ch)
        terms["attention"] = 2 * k * h * h * w * ch
        return MacReport(variant=variant, terms=terms, config=echo)

    if variant == "hpa":
        terms = _attention_projections(k * h, h * w, ch)
        terms["attention"] = 2 * k * h * w * ch
        return MacReport(variant=variant, terms=terms, config=echo)

    if variant == "lpa":
        terms = {
            "value_proj": h * w * ch * ch,
            "offset_proj": k * h * ch * 2 * m,
            "weight_proj": k * h * ch * m,
            "bilinear": 4 * k * h * m * ch,
            "aggregate": k * h * m * ch,
            "out_proj": k * h * ch * ch,
        }
        return MacReport(variant=variant, terms=terms, config=echo)

    # full model
    hpa = count_macs(cfg, "hpa")
    lpa = count_macs(cfg, "lpa")
    laca = sum(_attention_projections(k, k * h, ch).values()) + 2 * k * h * ch
    terms = {
        "backbone": _backbone_macs(cfg),
        "stage1_lane_self": _self_attention_macs(k, h, ch),
        "stage1_angle_self": _self_attention_macs(k, 1, ch),
        "stage1_hpa": hpa.total,
        "stage1_laca": laca,
        "stage1_predictor": _predictor_macs(cfg),
    }
    if cfg.stages == 2:
        terms.update(
            {
                "stage2_lane_self": _self_attention_macs(k, h, ch),
                "stage2_angle_self": _self_attention_macs(k, 1, ch),
                "stage2_lpa": lpa.total,
                "stage2_laca": laca,
                "stage2_predictor": _predictor_macs(cfg),
            }
        )
    return MacReport(variant=variant, terms=terms, config=echo)
