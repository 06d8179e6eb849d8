"""Datasets: synthetic scenes, TuSimple-format files, augmentation."""

from .augment import AugmentParams, apply_affine, augment, sample_affine, transform_lane
from .sample import Sample
from .synthetic import SynthConfig, generate_scene, make_dataset
from .tusimple import (
    RecordParseError,
    export_dataset,
    format_tusimple_record,
    load_sample_image,
    parse_tusimple_record,
    read_label_file,
    write_label_file,
)

__all__ = [
    "AugmentParams",
    "RecordParseError",
    "Sample",
    "SynthConfig",
    "apply_affine",
    "augment",
    "export_dataset",
    "format_tusimple_record",
    "generate_scene",
    "load_sample_image",
    "make_dataset",
    "parse_tusimple_record",
    "read_label_file",
    "sample_affine",
    "transform_lane",
    "write_label_file",
]
