"""Shot captioning network, training loop and checkpoints."""

from bfmd.model.backbone import DeskBackbone
from bfmd.model.captioner import (
    CaptionDecoder,
    ForwardOutput,
    ModalityEncoder,
    ModelInputs,
    MultimodalFusion,
    SemanticHead,
    ShotCaptioner,
    TokenRefiner,
)
from bfmd.model.checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from bfmd.model.config import MODALITIES, ModelConfig, desk_config, tiny_config
from bfmd.model.layers import FeedForward, MultiHeadAttention
from bfmd.model.train import Batch, PrefixCache, Trainer, batch_losses, collate, compute_losses, frozen_hash

__all__ = [
    "Batch",
    "CaptionDecoder",
    "DeskBackbone",
    "FeedForward",
    "ForwardOutput",
    "MODALITIES",
    "ModalityEncoder",
    "ModelConfig",
    "ModelInputs",
    "MultiHeadAttention",
    "MultimodalFusion",
    "PrefixCache",
    "SemanticHead",
    "ShotCaptioner",
    "TokenRefiner",
    "Trainer",
    "batch_losses",
    "collate",
    "compute_losses",
    "desk_config",
    "frozen_hash",
    "load_checkpoint",
    "read_checkpoint",
    "save_checkpoint",
    "tiny_config",
]
