"""End-to-end acceptance checks for the sparse-anchor lane detector.

Each test prints one PASS/FAIL line with its measured numbers (run with
``pytest tests/test_acceptance.py -v -s`` to see them live).  The overfit
fixture trains six small models on procedural scenes and takes several
minutes; everything before it finishes in seconds.
"""

import json
import math
import time
from fractions import Fraction
from types import SimpleNamespace

import numpy as np
import pytest
import torch
import yaml

from oracles import (
    brute_force_min_cost,
    column_attention_loop,
    deformable_attention_loop,
    masked_full_attention_rows,
    maxdiff,
)
from sparselane.cli import main as cli_main
from sparselane.config import config_from_dict
from sparselane.data.tusimple import parse_tusimple_record
from sparselane.geometry import MAX_ANGLE, AnchorSpec, rotate_anchor, sample_y_grid
from sparselane.losses import LossWeights, line_iou, line_iou_loss, total_loss
from sparselane.matching import Assignment, hungarian
from sparselane.model import build_model, load_checkpoint
from sparselane.model.attention import (
    AnchorColumnAttention,
    DeformableLaneAttention,
    RowAlignedCrossAttention,
)
from sparselane.model.config import ModelConfig
from sparselane.model.decoder import DynamicLanePredictor
from sparselane.profiler import count_macs
from sparselane.training import build_dataset, images_to_tensor, train


def check(label: str, ok: bool, detail: str) -> None:
    """Print one labelled result line, then the actual assertion."""
    print(f"{'PASS' if ok else 'FAIL'} {label} ({detail})")
    assert ok, f"{label}: {detail}"


def random_attention_dims(rng):
    heads = int(rng.choice([1, 2, 4]))
    ch = heads * int(rng.integers(2, 32 // heads + 1))
    return heads, ch


def test_row_attention_matches_masked_full_attention():
    torch.manual_seed(11)
    rng = np.random.default_rng(11)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        heads, ch = random_attention_dims(rng)
        h = int(rng.integers(1, 17))
        w = int(rng.integers(1, 17))
        k = int(rng.integers(1, 9))
        bsz = int(rng.integers(1, 3))
        module = RowAlignedCrossAttention(ch, heads)
        lane_q = torch.randn(bsz, ch, h, k)
        feat = torch.randn(bsz, ch, h, w)
        got = module(lane_q, feat)
        want = masked_full_attention_rows(lane_q, feat, module.block)
        worst = max(worst, maxdiff(got, want))
    elapsed = time.perf_counter() - start
    check(
        "row-aligned attention equals row-masked full attention",
        worst < 1e-5 and elapsed < 10.0,
        f"max |diff| {worst:.2e} over 20 random configs in {elapsed:.1f}s",
    )


def test_angle_attention_matches_per_anchor_loop():
    torch.manual_seed(12)
    rng = np.random.default_rng(12)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        heads, ch = random_attention_dims(rng)
        h = int(rng.integers(1, 17))
        k = int(rng.integers(1, 9))
        bsz = int(rng.integers(1, 3))
        module = AnchorColumnAttention(ch, heads)
        angle_q = torch.randn(bsz, ch, 1, k)
        lane_q = torch.randn(bsz, ch, h, k)
        got = module(angle_q, lane_q)
        want = column_attention_loop(angle_q, lane_q, module.block)
        worst = max(worst, maxdiff(got, want))
    elapsed = time.perf_counter() - start
    check(
        "anchor-column attention equals per-anchor loop",
        worst < 1e-5 and elapsed < 10.0,
        f"max |diff| {worst:.2e} over 20 random configs in {elapsed:.1f}s",
    )


def randomised_deformable(ch, m):
    module = DeformableLaneAttention(ch, m)
    # the offset and weight heads ship zero-initialised; give them real
    # values so the comparison exercises off-grid sampling
    with torch.no_grad():
        module.offset_proj.weight.normal_(0, 0.3)
        module.offset_proj.bias.normal_(0, 0.5)
        module.weight_proj.weight.normal_(0, 0.3)
        module.weight_proj.bias.normal_(0, 0.1)
    return module


def test_deformable_attention_matches_naive_sampling():
    torch.manual_seed(13)
    rng = np.random.default_rng(13)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        ch = int(rng.integers(2, 9))
        h = int(rng.integers(1, 7))
        k = int(rng.integers(1, 4))
        hf = int(rng.integers(1, 7))
        wf = int(rng.integers(1, 11))
        m = int(rng.integers(1, 5))
        bsz = int(rng.integers(1, 3))
        module = randomised_deformable(ch, m)
        lane_q = torch.randn(bsz, ch, h, k)
        feat = torch.randn(bsz, ch, hf, wf)
        ref = torch.stack(
            [
                torch.rand(bsz, h * k) * (wf + 4) - 2,  # deliberately off-grid
                torch.rand(bsz, h * k) * (hf + 4) - 2,
            ],
            dim=-1,
        )
        got = module(lane_q, feat, ref)
        want = deformable_attention_loop(lane_q, feat, ref, module)
        worst = max(worst, maxdiff(got, want))

    # channel-constant features make every sampling location equivalent,
    # so the output must not depend on the reference points at all
    module = randomised_deformable(8, 4)
    lane_q = torch.randn(2, 8, 4, 3)
    feat = torch.randn(2, 8, 1, 1).expand(2, 8, 6, 10).contiguous()
    ref_a = torch.rand(2, 12, 2) * 8
    ref_b = torch.rand(2, 12, 2) * 8
    shift = maxdiff(module(lane_q, feat, ref_a), module(lane_q, feat, ref_b))
    elapsed = time.perf_counter() - start
    check(
        "deformable attention equals naive bilinear sampling",
        worst < 1e-5 and shift < 1e-6 and elapsed < 10.0,
        f"max |diff| {worst:.2e}, constant-field ref shift {shift:.2e}, {elapsed:.1f}s",
    )


def test_hungarian_matches_exhaustive_search():
    rng = np.random.default_rng(14)
    start = time.perf_counter()
    worst = 0.0
    for trial in range(200):
        g = int(rng.integers(1, 7))
        k = int(rng.integers(g, 7))
        cost = rng.uniform(0.0, 1.0, size=(g, k))
        if trial % 4 == 0:
            cost = np.round(cost, 1)  # force ties
        got = hungarian(cost).total_cost
        want = brute_force_min_cost(cost)
        worst = max(worst, abs(got - want))
    elapsed = time.perf_counter() - start
    check(
        "hungarian matching equals exhaustive enumeration",
        worst < 1e-9 and elapsed < 5.0,
        f"max |cost diff| {worst:.2e} over 200 matrices in {elapsed:.1f}s",
    )


def _assembled_loss(angle_logits, offsets, score_logits, inst):
    """Anchor generation, composition and the combined loss as one graph."""
    angles = (2.0 * torch.sigmoid(angle_logits) - 1.0) * MAX_ANGLE
    angles = angles.clamp(-MAX_ANGLE + 1e-6, MAX_ANGLE - 1e-6)
    centers = torch.as_tensor(inst["centers"], dtype=angle_logits.dtype)
    ys = torch.as_tensor(inst["ys"], dtype=angle_logits.dtype)
    y_rot = inst["rotation_ratio"] * inst["img_height"]
    anchor = centers[None, :] + (y_rot - ys)[:, None] * torch.tan(angles)[None, :]
    lane_xs = anchor + offsets
    stage = SimpleNamespace(scores=torch.sigmoid(score_logits), lane_xs=lane_xs)
    gt_xs = torch.as_tensor(inst["gt_xs"], dtype=angle_logits.dtype)
    gt_valid = torch.as_tensor(inst["gt_valid"])
    assignment = Assignment(pairs=inst["pairs"], total_cost=0.0)
    breakdown = total_loss(
        [stage], gt_xs, gt_valid, [assignment],
        weights=LossWeights(), liou_radius=inst["radius"],
    )
    return breakdown.total


def _draw_instance(rng):
    k = int(rng.integers(2, 7))
    n = int(rng.integers(8, 25))
    g = int(rng.integers(1, k + 1))
    gt_valid = rng.uniform(size=(g, n)) < 0.7
    for row in gt_valid:
        row[rng.integers(0, n)] = True
        row[rng.integers(0, n)] = True
    inst = {
        "centers": rng.uniform(10.0, 90.0, size=k),
        "ys": np.linspace(0.0, 100.0, n),
        "rotation_ratio": 0.6,
        "img_height": 100.0,
        "gt_xs": rng.uniform(5.0, 95.0, size=(g, n)),
        "gt_valid": gt_valid,
        "pairs": tuple((gi, int(p)) for gi, p in enumerate(rng.permutation(k)[:g])),
        "radius": 1.875,
    }
    params = {
        "angle_logits": rng.uniform(-2.0, 2.0, size=k),
        "offsets": rng.normal(0.0, 3.0, size=(n, k)),
        "score_logits": rng.uniform(-2.0, 2.0, size=k),
    }
    return inst, params


def _instance_is_smooth(inst, params):
    """Reject draws whose |pred - gt| gaps sit on an L1 kink."""
    sig = 1.0 / (1.0 + np.exp(-params["angle_logits"]))
    angles = (2.0 * sig - 1.0) * MAX_ANGLE
    y_rot = inst["rotation_ratio"] * inst["img_height"]
    anchor = inst["centers"][None, :] + (y_rot - inst["ys"])[:, None] * np.tan(angles)[None, :]
    lane_xs = anchor + params["offsets"]
    smallest = math.inf
    for gi, p in inst["pairs"]:
        rows = inst["gt_valid"][gi]
        gaps = np.abs(lane_xs[rows, p] - inst["gt_xs"][gi, rows])
        smallest = min(smallest, float(gaps.min()))
    return smallest > 1e-3


def test_loss_gradients_match_finite_differences():
    rng = np.random.default_rng(15)
    start = time.perf_counter()
    step = 1e-4
    worst = 0.0
    worst64 = 0.0
    for _ in range(10):
        inst, params = _draw_instance(rng)
        attempts = 0
        while not _instance_is_smooth(inst, params):
            inst, params = _draw_instance(rng)
            attempts += 1
            assert attempts < 50

        # analytic gradients from the single-precision graph
        leaves32 = {
            name: torch.tensor(value, dtype=torch.float32, requires_grad=True)
            for name, value in params.items()
        }
        loss32 = _assembled_loss(
            leaves32["angle_logits"], leaves32["offsets"], leaves32["score_logits"], inst
        )
        loss32.backward()

        # a double-precision analytic pass isolates formula errors from
        # float32 rounding and must sit far below the stated tolerance
        leaves64 = {
            name: torch.tensor(value, dtype=torch.float64, requires_grad=True)
            for name, value in params.items()
        }
        loss64 = _assembled_loss(
            leaves64["angle_logits"], leaves64["offsets"], leaves64["score_logits"], inst
        )
        loss64.backward()

        # double-precision central differences as the oracle
        for name in params:
            base = {
                key: torch.tensor(value, dtype=torch.float64)
                for key, value in params.items()
            }
            flat = base[name].reshape(-1)
            fd = torch.empty_like(flat)
            for i in range(flat.numel()):
                orig = float(flat[i])
                flat[i] = orig + step
                hi = _assembled_loss(
                    base["angle_logits"], base["offsets"], base["score_logits"], inst
                )
                flat[i] = orig - step
                lo = _assembled_loss(
                    base["angle_logits"], base["offsets"], base["score_logits"], inst
                )
                flat[i] = orig
                fd[i] = (hi - lo) / (2.0 * step)
            scale = max(float(fd.abs().max()), 1e-8)
            rel = float((leaves32[name].grad.double().reshape(-1) - fd).abs().max()) / scale
            worst = max(worst, rel)
            rel64 = float((leaves64[name].grad.reshape(-1) - fd).abs().max()) / scale
            worst64 = max(worst64, rel64)
    elapsed = time.perf_counter() - start
    check(
        "combined-loss gradients match central differences",
        worst < 1e-3 and worst64 < 1e-6 and elapsed < 30.0,
        f"max relative error {worst:.2e} single precision, {worst64:.2e} double, "
        f"over 10 instances in {elapsed:.1f}s",
    )


def test_anchor_rotation_geometry():
    rng = np.random.default_rng(16)
    start = time.perf_counter()

    # a zero angle must reproduce the vertical anchor bit for bit
    vertical_exact = True
    for _ in range(200):
        grid = sample_y_grid(int(rng.integers(2, 80)), float(rng.uniform(50, 720)))
        center = float(rng.uniform(0.0, 800.0))
        ratio = float(rng.uniform(0.05, 1.0))
        lane = rotate_anchor(AnchorSpec(center, ratio, 0.0), grid)
        vertical_exact &= bool(np.all(lane.xs == center))

    # the rotation point itself must not move
    grid = sample_y_grid(72, 320.0)
    worst_pivot = 0.0
    for _ in range(1000):
        center = float(rng.uniform(0.0, 800.0))
        ratio = float(rng.uniform(0.05, 0.95))
        angle = float(rng.uniform(-MAX_ANGLE + 0.01, MAX_ANGLE - 0.01))
        lane = rotate_anchor(AnchorSpec(center, ratio, angle), grid)
        pivot_x = float(np.interp(ratio * 320.0, grid.ys, lane.xs))
        worst_pivot = max(worst_pivot, abs(pivot_x - center))

    # the angle head keeps every output strictly inside (-pi/3, pi/3),
    # including logits that saturate a float32 sigmoid
    torch.manual_seed(16)
    predictor = DynamicLanePredictor(channels=16, feat_height=4, n_points=8)
    strict = True
    largest = 0.0
    with torch.no_grad():
        for bias in (-1e9, -1e4, -20.0, 0.0, 20.0, 1e4, 1e9):
            predictor.angle_fc2.bias.fill_(bias)
            out = predictor(torch.randn(2, 16, 4, 6), torch.randn(2, 16, 1, 6))
            angles = out["angles"]
            strict &= bool((angles.abs() < MAX_ANGLE).all())
            largest = max(largest, float(angles.abs().max()))
    elapsed = time.perf_counter() - start
    check(
        "anchor rotation geometry and strict angle range",
        vertical_exact and worst_pivot < 1e-9 and strict and elapsed < 5.0,
        f"zero-angle exact {vertical_exact}, pivot drift {worst_pivot:.1e}, "
        f"max |angle| {largest:.9f} < {MAX_ANGLE:.9f}, {elapsed:.1f}s",
    )


def test_row_attention_cost_ratio_is_exact():
    ratios = []
    for h in (4, 10, 20, 40):
        cfg = ModelConfig(
            img_height=16 * h,
            img_width=800,
            channels=16,
            heads=4,
            num_anchors=5,
            n_points=8,
            num_sample_points=3,
            backbone_widths=(8, 16, 16, 16),
        )
        vanilla = count_macs(cfg, "vanilla_cross").terms["attention"]
        hpa = count_macs(cfg, "hpa").terms["attention"]
        ratios.append((h, Fraction(hpa, vanilla)))
    ok = all(ratio == Fraction(1, h) for h, ratio in ratios)
    detail = ", ".join(f"H={h}: {ratio}" for h, ratio in ratios)
    check("row-aligned attention cost ratio is exactly 1/H", ok, detail)


def test_line_iou_frozen_values():
    n = 10
    radius = 15.0  # the default for an 800 px wide image
    gt = torch.full((n,), 300.0, dtype=torch.float64)

    identity = float(line_iou_loss(gt.clone(), gt, radius))
    at_radius = float(line_iou(gt + radius, gt, radius))
    at_double = float(line_iou(gt + 2.0 * radius, gt, radius))
    at_triple = float(line_iou(gt + 3.0 * radius, gt, radius))

    gaps = np.linspace(0.0, 4.0 * radius, 50)
    ious = [float(line_iou(gt + float(gap), gt, radius)) for gap in gaps]
    monotone = all(a > b for a, b in zip(ious, ious[1:]))

    ok = (
        identity == 0.0
        and abs(at_radius - 1.0 / 3.0) < 1e-9
        and at_double <= 0.0
        and at_triple < 0.0
        and monotone
    )
    check(
        "line IoU frozen values and monotonicity",
        ok,
        f"identity loss {identity}, IoU at radius {at_radius:.12f}, "
        f"at 2x {at_double}, at 3x {at_triple:.3f}, monotone {monotone}",
    )


OVERFIT_RAW = {
    "model": {
        "img_height": 256,
        "img_width": 256,
        "n_points": 72,
        "num_anchors": 8,
        "channels": 32,
        "heads": 4,
        "num_sample_points": 25,
        "backbone_widths": [8, 16, 32, 32],
    },
    "train": {
        "iterations": 2000,
        "batch_size": 8,
        "lr": 0.003,
        "eval_interval": 50,
        "early_stop_f1": 1.0,
        "checkpoint_interval": 0,
        "log_interval": 50,
    },
    "data": {"count": 32},
}


@pytest.fixture(scope="module")
def overfit_runs(tmp_path_factory):
    """Six small training runs: three seeds, with and without refinement."""
    root = tmp_path_factory.mktemp("overfit")
    results = {}
    for stages in (2, 1):
        for seed in (0, 1, 2):
            raw = json.loads(json.dumps(OVERFIT_RAW))
            raw["seed"] = seed
            raw["model"]["stages"] = stages
            run = config_from_dict(raw)
            out = root / f"stages{stages}_seed{seed}"
            begin = time.perf_counter()
            result = train(run, out)
            wall = time.perf_counter() - begin
            print(
                f"overfit run stages={stages} seed={seed}: "
                f"F1 {result.report.f1:.4f} after {result.iterations_run} iterations "
                f"({wall:.0f}s)"
            )
            results[(stages, seed)] = {
                "f1": result.report.f1,
                "wall": wall,
                "iterations": result.iterations_run,
                "out": out,
                "raw": raw,
            }
    return results


def test_overfits_synthetic_scenes(overfit_runs):
    run = overfit_runs[(2, 0)]
    check(
        "two-stage model overfits 32 synthetic scenes",
        run["f1"] >= 0.90 and run["wall"] < 900.0,
        f"train F1 {run['f1']:.4f} after {run['iterations']} iterations "
        f"in {run['wall']:.0f}s (budget 900s)",
    )


def test_second_stage_does_not_hurt(overfit_runs):
    two = [overfit_runs[(2, seed)]["f1"] for seed in (0, 1, 2)]
    one = [overfit_runs[(1, seed)]["f1"] for seed in (0, 1, 2)]
    mean_two = sum(two) / len(two)
    mean_one = sum(one) / len(one)
    check(
        "refinement stage does not hurt detection",
        mean_two >= mean_one - 0.01,
        f"two-stage F1 {two} (mean {mean_two:.4f}) vs "
        f"one-stage F1 {one} (mean {mean_one:.4f})",
    )


def test_cli_predictions_round_trip(overfit_runs, tmp_path):
    info = overfit_runs[(2, 0)]
    config_path = tmp_path / "run.yaml"
    config_path.write_text(yaml.safe_dump(info["raw"]))
    out = tmp_path / "infer"
    code = cli_main(
        [
            "infer",
            "--config", str(config_path),
            "--checkpoint", str(info["out"] / "final.npz"),
            "--out", str(out),
        ]
    )
    assert code == 0

    run = config_from_dict(info["raw"])
    model = build_model(run.model, seed=run.seed)
    load_checkpoint(info["out"] / "final.npz", model)
    model.eval()
    samples = build_dataset(run)
    grid = run.model.grid()

    reference = []
    batch = run.train.batch_size
    with torch.no_grad():
        for start in range(0, len(samples), batch):
            chunk = samples[start : start + batch]
            final = model(images_to_tensor(chunk))[-1]
            for b in range(len(chunk)):
                lanes = final.lanes(b, threshold=run.model.score_threshold)
                # the label format cannot carry a lane with no points
                reference.append([lane for lane in lanes if lane.valid.any()])

    lines = (out / "predictions.jsonl").read_text().strip().splitlines()
    counts_match = len(lines) == len(reference)
    worst = 0.0
    for line, ref_lanes in zip(lines, reference):
        parsed = parse_tusimple_record(line, grid, float(run.model.img_width))
        counts_match &= len(parsed.lanes) == len(ref_lanes)
        for got, want in zip(parsed.lanes, ref_lanes):
            counts_match &= bool(np.array_equal(got.valid, want.valid))
            both = got.valid & want.valid
            if both.any():
                worst = max(worst, float(np.abs(got.xs[both] - want.xs[both]).max()))
    check(
        "exported predictions re-parse to the in-process lanes",
        counts_match and worst < 1e-6,
        f"{len(lines)} records, lane sets equal {counts_match}, "
        f"max |x diff| {worst:.2e}",
    )
