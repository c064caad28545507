"""Multimodal fusion classifier."""

from .fusion import (
    FUSION_VARIANTS,
    MODALITIES,
    CrossAttentionBlock,
    ForwardOutput,
    FusionConfig,
    FusionModel,
    GRUEncoder,
    ModelBatch,
    NonFiniteError,
    bce_loss,
    gradients,
)

__all__ = [
    "FUSION_VARIANTS",
    "MODALITIES",
    "CrossAttentionBlock",
    "ForwardOutput",
    "FusionConfig",
    "FusionModel",
    "GRUEncoder",
    "ModelBatch",
    "NonFiniteError",
    "bce_loss",
    "gradients",
]
