"""Reading and writing TuSimple-style lane label files.

One JSON object per line with three keys: ``lanes`` (list of x lists, -2
marking absent rows), ``h_samples`` (the shared y positions), and
``raw_file`` (image path).  Parsing resamples every lane onto the package's
fixed y grid; writing goes the other way.
"""

from __future__ import annotations

import json
from pathlib import Path

import cv2
import numpy as np

from ..geometry import INVALID_X, Lane, YGrid, resample_polyline
from .sample import Sample


class RecordParseError(ValueError):
    """A label line that does not follow the TuSimple schema."""


def parse_tusimple_record(
    line: str,
    grid: YGrid,
    img_width: float,
    scale_x: float = 1.0,
    scale_y: float = 1.0,
) -> Sample:
    """Parse one label line into a Sample skeleton (no pixels loaded).

    Source points with x < 0 are treated as absent.  Each lane is scaled by
    (scale_x, scale_y) and then linearly resampled onto ``grid``; rows
    outside the source span, bracketed by absent rows, or landing outside
    [0, img_width) come back invalid.  Lanes with no valid rows are
    dropped.

    Raises:
        RecordParseError: malformed JSON, missing keys, or length
            mismatches, with the offending content named.
    """
    try:
        record = json.loads(line)
    except json.JSONDecodeError as err:
        raise RecordParseError(f"not valid JSON: {err}: {line[:80]!r}") from err
    if not isinstance(record, dict):
        raise RecordParseError(f"expected a JSON object, got {type(record).__name__}")
    for key in ("lanes", "h_samples", "raw_file"):
        if key not in record:
            raise RecordParseError(f"record for {record.get('raw_file', '?')} lacks '{key}'")

    h_samples = np.asarray(record["h_samples"], dtype=np.float64) * scale_y
    lanes = []
    for li, xs_raw in enumerate(record["lanes"]):
        xs = np.asarray(xs_raw, dtype=np.float64)
        if xs.shape != h_samples.shape:
            raise RecordParseError(
                f"{record['raw_file']}: lane {li} has {xs.size} points, "
                f"h_samples has {h_samples.size}"
            )
        src_valid = xs >= 0.0
        xs = xs * scale_x
        new_xs, new_valid = resample_polyline(h_samples, xs, src_valid, grid.ys)
        new_valid &= (new_xs >= 0.0) & (new_xs < img_width)
        if new_valid.any():
            lanes.append(Lane(xs=new_xs, valid=new_valid))

    return Sample(image=None, lanes=lanes, meta={"raw_file": record["raw_file"]})


def format_tusimple_record(
    lanes: list[Lane], grid: YGrid, raw_file: str, scores: bool = True
) -> str:
    """Serialise lanes already sampled on ``grid`` as one label line."""
    record = {
        "lanes": [
            [float(x) if v else INVALID_X for x, v in zip(lane.xs, lane.valid)] for lane in lanes
        ],
        "h_samples": [float(y) for y in grid.ys],
        "raw_file": raw_file,
    }
    if scores and any(lane.score is not None for lane in lanes):
        record["scores"] = [
            float(lane.score) if lane.score is not None else -1.0 for lane in lanes
        ]
    return json.dumps(record)


def read_label_file(
    path: str | Path,
    grid: YGrid,
    img_width: float,
    scale_x: float = 1.0,
    scale_y: float = 1.0,
) -> list[Sample]:
    """Parse every non-empty line of a label file."""
    samples = []
    with open(path, "r", encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                samples.append(parse_tusimple_record(line, grid, img_width, scale_x, scale_y))
            except RecordParseError as err:
                raise RecordParseError(f"{path}, line {number}: {err}") from err
    return samples


def write_label_file(path: str | Path, records: list[str]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(record + "\n")


def load_sample_image(sample: Sample, image_root: str | Path, size: tuple[int, int]) -> Sample:
    """Read and resize the image a skeleton points at; labels stay as-is.

    Callers are expected to have parsed labels with the matching
    (scale_x, scale_y), so only pixels are touched here.

    Args:
        size: target (height, width).
    """
    path = Path(image_root) / sample.meta["raw_file"]
    raw = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if raw is None:
        raise FileNotFoundError(f"cannot read image {path}")
    height, width = size
    if (raw.shape[0], raw.shape[1]) != (height, width):
        raw = cv2.resize(raw, (width, height), interpolation=cv2.INTER_LINEAR)
    rgb = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB).astype(np.float32) / 255.0
    return Sample(image=rgb, lanes=sample.lanes, meta=dict(sample.meta))


def export_dataset(samples: list[Sample], out_dir: str | Path, grid: YGrid) -> Path:
    """Write images plus a TuSimple-format label file; returns label path.

    Images land in ``out_dir/images`` as PNG, labels in
    ``out_dir/labels.jsonl`` with ``raw_file`` pointing at the PNGs.
    """
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, sample in enumerate(samples):
        if sample.image is None:
            raise ValueError(f"sample {i} has no image to export")
        name = sample.meta.get("id", f"sample-{i:05d}")
        rel = f"images/{name}.png"
        bgr = cv2.cvtColor((sample.image * 255.0).round().astype(np.uint8), cv2.COLOR_RGB2BGR)
        cv2.imwrite(str(out_dir / rel), bgr)
        lines.append(format_tusimple_record(sample.lanes, grid, rel, scores=False))
    label_path = out_dir / "labels.jsonl"
    write_label_file(label_path, lines)
    return label_path
