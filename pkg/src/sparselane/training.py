"""Deterministic training loop with Hungarian-matched set-prediction loss."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import torch

from .config import RunConfig
from .data import AugmentParams, Sample, SynthConfig, augment, load_sample_image, make_dataset
from .data.tusimple import read_label_file
from .evaluation import EvalReport
from .geometry import Lane
from .losses import LossWeights, liou_radius_for_width, total_loss
from .matching import Assignment, assignment_cost, hungarian
from .model import LaneDecoder, build_model, load_checkpoint, save_checkpoint


class TrainingDivergedError(RuntimeError):
    """The loss stopped being finite; diagnostics were written."""


@dataclass
class TrainResult:
    iterations_run: int
    final_checkpoint: Path
    log_rows: list[dict]
    report: EvalReport
    stopped_early: bool


def cosine_lr(base_lr: float, iteration: int, total: int) -> float:
    """Cosine decay from base_lr at iteration 0 toward 0 at the end."""
    if total <= 1:
        return base_lr
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * iteration / total))


def build_dataset(run: RunConfig) -> list[Sample]:
    """Materialise the configured dataset with images loaded."""
    if run.data.source == "synthetic":
        cfg = SynthConfig(
            img_height=run.model.img_height,
            img_width=run.model.img_width,
            n_points=run.model.n_points,
            seed=run.seed,
            **run.data.synthetic,
        )
        return make_dataset(cfg, run.data.count)

    grid = run.model.grid()
    scale_x = run.model.img_width / run.data.source_width
    scale_y = run.model.img_height / run.data.source_height
    skeletons = read_label_file(
        run.data.label_file, grid, float(run.model.img_width), scale_x, scale_y
    )
    root = run.data.image_root or Path(run.data.label_file).parent
    size = (run.model.img_height, run.model.img_width)
    return [load_sample_image(s, root, size) for s in skeletons]


def images_to_tensor(samples: list[Sample]) -> torch.Tensor:
    """Stack HWC float images into a (B, 3, H, W) batch."""
    arrays = []
    for sample in samples:
        if sample.image is None:
            raise ValueError("sample has no image")
        arrays.append(np.transpose(sample.image, (2, 0, 1)))
    return torch.from_numpy(np.stack(arrays))


def _image_assignments(
    out, batch_index: int, gt_lanes: list[Lane], img_width: float, w_reg: float, w_cls: float
) -> Assignment:
    if not gt_lanes:
        return Assignment(pairs=(), total_cost=0.0)
    cost = assignment_cost(
        out.lane_xs[batch_index].detach().cpu().numpy(),
        out.scores[batch_index].detach().cpu().numpy(),
        gt_lanes,
        img_width,
        w_reg=w_reg,
        w_cls=w_cls,
    )
    return hungarian(cost)


def batch_loss(
    outputs: list,
    samples: list[Sample],
    run: RunConfig,
    liou_radius: float,
) -> tuple[torch.Tensor, dict[str, float]]:
    """Mean combined loss over a batch, plus logged components."""
    weights = LossWeights(w_cls=run.train.w_cls, w_reg=run.train.w_reg, w_liou=run.train.w_liou)
    totals, comps = [], {"cls": 0.0, "reg": 0.0, "liou": 0.0}
    for b, sample in enumerate(samples):
        stage_views = [
            SimpleNamespace(scores=out.scores[b], lane_xs=out.lane_xs[b]) for out in outputs
        ]
        assignments = [
            _image_assignments(
                out, b, sample.lanes, float(run.model.img_width),
                run.train.assign_w_reg, run.train.assign_w_cls,
            )
            for out in outputs
        ]
        if sample.lanes:
            gt_xs = torch.from_numpy(np.stack([lane.xs for lane in sample.lanes])).float()
            gt_valid = torch.from_numpy(np.stack([lane.valid for lane in sample.lanes]))
        else:
            n = run.model.n_points
            gt_xs = torch.zeros(0, n)
            gt_valid = torch.zeros(0, n, dtype=torch.bool)
        breakdown = total_loss(
            stage_views, gt_xs, gt_valid, assignments, weights=weights, liou_radius=liou_radius
        )
        totals.append(breakdown.total)
        for key in comps:
            comps[key] += float(getattr(breakdown, key).detach()) / len(samples)
    return torch.stack(totals).mean(), comps


@torch.no_grad()
def evaluate(model: LaneDecoder, samples: list[Sample], run: RunConfig) -> EvalReport:
    """Threshold final-stage predictions and score them against labels."""
    model.eval()
    report = EvalReport(
        width=run.eval.lane_width,
        iou_threshold=run.eval.iou_threshold,
        point_tolerance=run.eval.point_tolerance,
    )
    batch = max(1, run.train.batch_size)
    for start in range(0, len(samples), batch):
        chunk = samples[start : start + batch]
        outs = model(images_to_tensor(chunk))
        final = outs[-1]
        for b, sample in enumerate(chunk):
            preds = final.lanes(b, threshold=run.model.score_threshold)
            image_id = sample.meta.get("id") or sample.meta.get("raw_file") or f"img-{start + b}"
            report.add_image(image_id, preds, sample.lanes)
    model.train()
    return report


def _dump_diagnostics(out_dir: Path, payload: dict) -> None:
    with open(out_dir / "diagnostics.json", "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2)


def _batch_stream(n: int, batch_size: int, seed: int, skip_batches: int):
    """Yield deterministic index batches, reshuffling each epoch."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
    queue: list[int] = []
    produced = 0
    while True:
        while len(queue) < batch_size:
            queue.extend(rng.permutation(n).tolist())
        batch, queue = queue[:batch_size], queue[batch_size:]
        if produced >= skip_batches:
            yield batch
        produced += 1


def train(
    run: RunConfig, out_dir: str | Path, resume_checkpoint: str | Path | None = None
) -> TrainResult:
    """Train per the config, writing checkpoints and a loss log under out_dir.

    Fully deterministic given (config, seed) on one platform: model init,
    batch order and augmentation draws all derive from ``run.seed``.  A NaN
    or inf loss aborts with diagnostics in ``diagnostics.json``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(run.seed)
    model = build_model(run.model, seed=run.seed)
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=run.train.lr, weight_decay=run.train.weight_decay
    )
    start_iter = 0
    if resume_checkpoint is not None:
        start_iter = load_checkpoint(resume_checkpoint, model, optimizer)

    samples = build_dataset(run)
    if not samples:
        raise ValueError("dataset is empty")
    grid = run.model.grid()
    liou_radius = liou_radius_for_width(float(run.model.img_width))
    aug_rng = np.random.default_rng(np.random.SeedSequence([run.seed, 202, start_iter]))
    aug_params = AugmentParams()

    total_iters = run.train.iterations
    stream = _batch_stream(len(samples), run.train.batch_size, run.seed, start_iter)
    log_rows: list[dict] = []
    stopped_early = False
    iteration = start_iter

    model.train()
    for iteration in range(start_iter, total_iters):
        lr = cosine_lr(run.train.lr, iteration, total_iters)
        for group in optimizer.param_groups:
            group["lr"] = lr

        batch_samples = [samples[i] for i in next(stream)]
        if run.train.augment:
            batch_samples = [augment(s, aug_rng, grid) for s in batch_samples]

        outputs = model(images_to_tensor(batch_samples))
        finite_outputs = all(
            bool(torch.isfinite(out.lane_xs).all() and torch.isfinite(out.scores).all())
            for out in outputs
        )
        if not finite_outputs:
            _dump_diagnostics(out_dir, {"iteration": iteration, "lr": lr, "loss": float("nan")})
            raise TrainingDivergedError(f"non-finite model outputs at iteration {iteration}")
        loss, comps = batch_loss(outputs, batch_samples, run, liou_radius)

        if not torch.isfinite(loss):
            diag = {"iteration": iteration, "lr": lr, "loss": float(loss.detach()), **comps}
            _dump_diagnostics(out_dir, diag)
            raise TrainingDivergedError(f"non-finite loss at iteration {iteration}")

        optimizer.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), run.train.clip_norm)
        optimizer.step()

        done = iteration + 1
        if done % run.train.log_interval == 0 or iteration == start_iter:
            log_rows.append({"iteration": done, "lr": lr, "total": float(loss.detach()), **comps})
        if run.train.checkpoint_interval and done % run.train.checkpoint_interval == 0:
            save_checkpoint(out_dir / f"iter{done:06d}.npz", model, optimizer, done)
        if (
            run.train.early_stop_f1 is not None
            and run.train.eval_interval
            and done % run.train.eval_interval == 0
        ):
            snapshot = evaluate(model, samples, run)
            if snapshot.f1 >= run.train.early_stop_f1:
                stopped_early = True
                iteration = done - 1
                break

    iterations_run = iteration + 1 if total_iters > start_iter else start_iter
    final_path = out_dir / "final.npz"
    save_checkpoint(final_path, model, optimizer, iterations_run)
    report = evaluate(model, samples, run)
    return TrainResult(
        iterations_run=iterations_run,
        final_checkpoint=final_path,
        log_rows=log_rows,
        report=report,
        stopped_early=stopped_early,
    )
