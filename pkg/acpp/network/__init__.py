"""Attention residual network, inference helpers and checkpoints."""

from .checkpoint import (
    checkpoint_bytes,
    load_checkpoint,
    load_checkpoint_with_metadata,
    parse_checkpoint,
    save_checkpoint,
)
from .ensemble import infer, restore, self_ensemble_infer, self_ensemble_raw
from .model import (
    ModelParameters,
    attention_block,
    channel_attention,
    init_model,
    model_forward,
    parameter_count,
    parameter_shapes,
    spatial_attention,
)

__all__ = [
    "ModelParameters",
    "attention_block",
    "channel_attention",
    "checkpoint_bytes",
    "infer",
    "init_model",
    "load_checkpoint",
    "load_checkpoint_with_metadata",
    "model_forward",
    "parameter_count",
    "parameter_shapes",
    "parse_checkpoint",
    "restore",
    "save_checkpoint",
    "self_ensemble_infer",
    "self_ensemble_raw",
    "spatial_attention",
]
