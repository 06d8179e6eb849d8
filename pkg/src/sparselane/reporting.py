"""File outputs for the CLI: CSV tables, figures and overlay images."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import EvalReport
from .geometry import Lane, YGrid
from .profiler import MacReport

LANE_COLORS = ("tab:red", "tab:cyan", "tab:orange", "tab:green", "tab:purple", "tab:pink")


def write_csv(path: str | Path, rows: list[dict]) -> None:
    """Write dict rows with the union of keys, first-seen order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields: list[str] = []
    for row in rows:
        for key in row:
            if key not in fields:
                fields.append(key)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)


def save_loss_curve(log_rows: list[dict], path: str | Path) -> None:
    """Total and per-component loss against iteration."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    if log_rows:
        its = [row["iteration"] for row in log_rows]
        for key in ("total", "cls", "reg", "liou"):
            ax.plot(its, [row[key] for row in log_rows], label=key)
        ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_title("training loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_eval_figure(report: EvalReport, path: str | Path) -> None:
    """Headline metrics as bars plus the per-image F1 spread."""
    fig, (left, right) = plt.subplots(1, 2, figsize=(9, 4))
    names = ["precision", "recall", "F1", "accuracy"]
    values = [report.precision, report.recall, report.f1, report.accuracy]
    left.bar(names, values, color="tab:blue")
    left.set_ylim(0.0, 1.05)
    left.set_title("aggregate metrics")
    for i, v in enumerate(values):
        left.text(i, v + 0.02, f"{v:.3f}", ha="center", fontsize=9)

    per_f1 = []
    for row in report.per_image:
        tp, fp, fn = row["tp"], row["fp"], row["fn"]
        denom = 2 * tp + fp + fn
        per_f1.append(2 * tp / denom if denom else 1.0)
    if per_f1:
        right.hist(per_f1, bins=np.linspace(0, 1, 21), color="tab:green")
    right.set_title("per-image F1")
    right.set_xlabel("F1")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_mac_figure(reports: list[MacReport], path: str | Path) -> None:
    """Total MACs per variant, log scale."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    names = [r.variant for r in reports]
    totals = [r.total for r in reports]
    ax.bar(names, totals, color="tab:purple")
    ax.set_yscale("log")
    ax.set_ylabel("multiply-accumulates")
    ax.set_title("attention cost by variant")
    for i, v in enumerate(totals):
        ax.text(i, v, f"{v:,}", ha="center", va="bottom", fontsize=8, rotation=20)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_sweep_figure(rows: list[dict], axis: str, path: str | Path) -> None:
    """Mean F1 per swept value with per-seed points."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    values = sorted({row["value"] for row in rows})
    means = []
    for value in values:
        f1s = [row["f1"] for row in rows if row["value"] == value]
        means.append(float(np.mean(f1s)))
        ax.scatter([value] * len(f1s), f1s, color="tab:gray", s=18, zorder=2)
    ax.plot(values, means, marker="o", color="tab:blue", zorder=3)
    ax.set_xlabel(axis)
    ax.set_ylabel("F1")
    ax.set_title(f"F1 against {axis}")
    ax.set_ylim(0.0, 1.05)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_overlay(
    image: np.ndarray, lanes: list[Lane], grid: YGrid, path: str | Path, title: str = ""
) -> None:
    """Draw predicted lanes over the image: lines plus sample-point dots."""
    fig, ax = plt.subplots(figsize=(6, 6 * image.shape[0] / max(1, image.shape[1])))
    ax.imshow(np.clip(image, 0.0, 1.0))
    for i, lane in enumerate(lanes):
        color = LANE_COLORS[i % len(LANE_COLORS)]
        xs = lane.xs[lane.valid]
        ys = grid.ys[lane.valid]
        label = None if lane.score is None else f"{lane.score:.2f}"
        ax.plot(xs, ys, color=color, linewidth=2, label=label)
        ax.scatter(xs, ys, color=color, s=8, zorder=3)
    if any(lane.score is not None for lane in lanes):
        ax.legend(loc="lower right", fontsize=8)
    ax.set_xlim(0, image.shape[1])
    ax.set_ylim(image.shape[0], 0)
    ax.set_title(title)
    ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
