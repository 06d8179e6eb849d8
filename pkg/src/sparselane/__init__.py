"""Sparse-anchor lane detection with a two-stage query decoder."""

from .config import (
    DataConfig,
    EvalConfig,
    RunConfig,
    SweepConfig,
    TrainConfig,
    config_from_dict,
    config_to_dict,
    load_config,
    save_config,
)
from .evaluation import EvalReport, lane_pair_iou, match_and_score, tusimple_accuracy
from .geometry import (
    INVALID_X,
    MAX_ANGLE,
    AnchorSet,
    AnchorSpec,
    Lane,
    YGrid,
    compose_lane,
    init_anchor_centers,
    resample_polyline,
    rotate_anchor,
    sample_y_grid,
    valid_runs,
)
from .losses import (
    LossBreakdown,
    LossWeights,
    focal_loss,
    l1_reg_loss,
    line_iou,
    line_iou_loss,
    liou_radius_for_width,
    total_loss,
)
from .matching import (
    Assignment,
    InfeasibleAssignmentError,
    assignment_cost,
    hungarian,
)
from .model import (
    CheckpointMismatchError,
    LaneDecoder,
    ModelConfig,
    build_model,
    coordinate_map,
    load_checkpoint,
    save_checkpoint,
)
from .profiler import VARIANTS, MacReport, count_macs
from .training import TrainingDivergedError, TrainResult, build_dataset, evaluate, train

__all__ = [
    "AnchorSet",
    "AnchorSpec",
    "Assignment",
    "CheckpointMismatchError",
    "DataConfig",
    "EvalConfig",
    "EvalReport",
    "INVALID_X",
    "InfeasibleAssignmentError",
    "Lane",
    "LaneDecoder",
    "LossBreakdown",
    "LossWeights",
    "MAX_ANGLE",
    "MacReport",
    "ModelConfig",
    "RunConfig",
    "SweepConfig",
    "TrainConfig",
    "TrainResult",
    "TrainingDivergedError",
    "VARIANTS",
    "YGrid",
    "assignment_cost",
    "build_dataset",
    "build_model",
    "compose_lane",
    "config_from_dict",
    "config_to_dict",
    "coordinate_map",
    "count_macs",
    "evaluate",
    "focal_loss",
    "hungarian",
    "init_anchor_centers",
    "l1_reg_loss",
    "lane_pair_iou",
    "line_iou",
    "line_iou_loss",
    "liou_radius_for_width",
    "load_checkpoint",
    "load_config",
    "match_and_score",
    "resample_polyline",
    "rotate_anchor",
    "sample_y_grid",
    "save_checkpoint",
    "save_config",
    "total_loss",
    "train",
    "tusimple_accuracy",
    "valid_runs",
]
