"""Run configuration: one nested YAML file drives every CLI verb."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .model.config import ModelConfig


@dataclass
class TrainConfig:
    """Optimisation schedule and loss mixing."""

    iterations: int = 2000
    batch_size: int = 8
    lr: float = 0.003
    weight_decay: float = 1e-4
    clip_norm: float = 5.0
    log_interval: int = 10
    checkpoint_interval: int = 500
    eval_interval: int = 200
    early_stop_f1: float | None = None
    augment: bool = False
    w_cls: float = 10.0
    w_reg: float = 0.5
    w_liou: float = 5.0
    assign_w_reg: float = 10.0
    assign_w_cls: float = 1.0

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class DataConfig:
    """Where samples come from.

    ``synthetic`` draws procedural scenes sized to the model's input.
    ``tusimple`` reads a label file and image root; labels are rescaled
    from (source_height, source_width) to the model's input size.
    """

    source: str = "synthetic"
    count: int = 32
    label_file: str | None = None
    image_root: str | None = None
    source_height: int = 720
    source_width: int = 1280
    synthetic: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.source not in ("synthetic", "tusimple"):
            raise ValueError(f"source must be synthetic or tusimple, got {self.source!r}")
        if self.source == "tusimple" and not self.label_file:
            raise ValueError("tusimple source needs a label_file")


@dataclass
class EvalConfig:
    """Metric parameters."""

    lane_width: float = 30.0
    iou_threshold: float = 0.5
    point_tolerance: float = 20.0


@dataclass
class SweepConfig:
    """Axis for the sweep verb; each value trains and evaluates once."""

    axis: str = "rotation_ratio"
    values: list = field(default_factory=lambda: [0.5, 0.6, 0.7, 0.8, 0.9, 1.0])
    seeds: list = field(default_factory=lambda: [0])

    _AXES = ("rotation_ratio", "num_anchors", "stages")

    def __post_init__(self):
        if self.axis not in self._AXES:
            raise ValueError(f"sweep axis must be one of {self._AXES}, got {self.axis!r}")
        if not self.values:
            raise ValueError("sweep needs at least one value")


@dataclass
class RunConfig:
    """Everything one run needs, nested by concern."""

    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    seed: int = 0


_SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "data": DataConfig,
    "eval": EvalConfig,
    "sweep": SweepConfig,
}


def _build_section(cls, values: dict, section: str):
    known = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown {section} config keys: {sorted(unknown)}")
    if "backbone_widths" in values and values["backbone_widths"] is not None:
        values = dict(values)
        values["backbone_widths"] = tuple(values["backbone_widths"])
    if "scale_range" in values and values["scale_range"] is not None:
        values = dict(values)
        values["scale_range"] = tuple(values["scale_range"])
    return cls(**values)


def config_from_dict(raw: dict) -> RunConfig:
    """Build a RunConfig from nested plain dicts, rejecting unknown keys."""
    raw = dict(raw or {})
    kwargs = {}
    for section, cls in _SECTIONS.items():
        values = raw.pop(section, None)
        if values is None:
            kwargs[section] = cls()
        elif isinstance(values, dict):
            kwargs[section] = _build_section(cls, values, section)
        else:
            raise ValueError(f"config section {section!r} must be a mapping")
    seed = raw.pop("seed", 0)
    if raw:
        raise ValueError(f"unknown top-level config keys: {sorted(raw)}")
    return RunConfig(seed=int(seed), **kwargs)


def config_to_dict(run: RunConfig) -> dict:
    """Plain nested dict (lists, no tuples) for YAML/JSON dumping."""
    return json.loads(json.dumps(dataclasses.asdict(run)))


def load_config(path: str | Path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as handle:
        raw = yaml.safe_load(handle)
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: config root must be a mapping")
    return config_from_dict(raw)


def save_config(run: RunConfig, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        yaml.safe_dump(config_to_dict(run), handle, sort_keys=False)
