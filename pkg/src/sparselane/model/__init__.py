"""Neural model: backbone, attention blocks, decoder and checkpoints."""

from .attention import (
    AnchorColumnAttention,
    AngleSelfAttention,
    DeformableLaneAttention,
    LaneSelfAttention,
    MultiHeadAttention,
    ResidualAttentionBlock,
    RowAlignedCrossAttention,
    sinusoidal_position_encoding,
)
from .backbone import ConvBackbone
from .checkpoint import (
    FORMAT_VERSION,
    CheckpointMismatchError,
    load_checkpoint,
    save_checkpoint,
)
from .config import ModelConfig
from .decoder import (
    DecoderOutput,
    DynamicLanePredictor,
    LaneDecoder,
    QueryState,
    build_model,
    coordinate_map,
    rotate_anchors_torch,
)

__all__ = [
    "AnchorColumnAttention",
    "AngleSelfAttention",
    "CheckpointMismatchError",
    "ConvBackbone",
    "DecoderOutput",
    "DeformableLaneAttention",
    "DynamicLanePredictor",
    "FORMAT_VERSION",
    "LaneDecoder",
    "LaneSelfAttention",
    "ModelConfig",
    "MultiHeadAttention",
    "QueryState",
    "ResidualAttentionBlock",
    "RowAlignedCrossAttention",
    "build_model",
    "coordinate_map",
    "load_checkpoint",
    "rotate_anchors_torch",
    "save_checkpoint",
    "sinusoidal_position_encoding",
]
