"""Minimal numpy compute layer: parameters, layers with explicit backward passes, Adam, checkpoints."""

from .checkpoint import CheckpointError, load_into, read_checkpoint, save_checkpoint
from .layers import (
    MLP,
    DropoutContext,
    EncoderConfig,
    LayerNorm,
    Linear,
    MixerBlock,
    MultiHeadSelfAttention,
    ShapeError,
    TransformerEncoder,
    mean_pool,
    mean_pool_backward,
    mlp,
    transformer_encoder,
)
from .params import NumericError, ParameterStore, adam_step

__all__ = [
    "MLP",
    "CheckpointError",
    "DropoutContext",
    "EncoderConfig",
    "LayerNorm",
    "Linear",
    "MixerBlock",
    "MultiHeadSelfAttention",
    "NumericError",
    "ParameterStore",
    "ShapeError",
    "TransformerEncoder",
    "adam_step",
    "load_into",
    "mean_pool",
    "mean_pool_backward",
    "mlp",
    "read_checkpoint",
    "save_checkpoint",
    "transformer_encoder",
]
