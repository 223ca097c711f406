from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from bfmd.errors import InvalidParameter

MODALITIES = ("bbox", "pose", "shuttle")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 256
    heads: int = 8
    decoder_layers: int = 6
    refiner_layers: int = 1
    ffn_mult: int = 4
    alpha: float = 0.2
    lam: float = 0.1
    beta_init: float = 0.1
    max_len: int = 120
    # video geometry
    frames: int = 16
    image_size: int = 224
    tubelet: int = 2
    patch: int = 16
    backbone_blocks: int = 2
    trainable_backbone_blocks: int = 2
    # structural modalities
    n_keypoints: int = 17
    coord_scale: float = 224.0
    modalities: tuple[str, ...] = MODALITIES
    semantic_k: int = 22
    # ablation switches
    use_refiner: bool = True
    use_sf: bool = True
    sf_at_inference: bool = True
    # "prefix": position t pools states 1..t (causal, matches greedy decoding);
    # "full": every position receives the correction from the whole caption
    sf_pooling: str = "prefix"
    init_std: float = 0.02
    # residual and embedding dropout; inactive in eval mode
    dropout: float = 0.0

    def __post_init__(self):
        if self.d_model % self.heads:
            raise InvalidParameter(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.frames % self.tubelet or self.image_size % self.patch:
            raise InvalidParameter("frames/image_size must be divisible by tubelet/patch")
        unknown = set(self.modalities) - set(MODALITIES)
        if unknown:
            raise InvalidParameter(f"unknown modalities {sorted(unknown)}")
        if self.sf_pooling not in ("prefix", "full"):
            raise InvalidParameter(f"sf_pooling must be 'prefix' or 'full', got {self.sf_pooling!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidParameter(f"dropout must be in [0, 1), got {self.dropout}")
        if self.max_len < 2:
            raise InvalidParameter("max_len must allow BOS and EOS")

    @property
    def n_tokens(self) -> int:
        return (self.frames // self.tubelet) * (self.image_size // self.patch) ** 2

    @property
    def patch_dim(self) -> int:
        return self.tubelet * self.patch * self.patch * 3

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["modalities"] = list(self.modalities)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "modalities" in d:
            d["modalities"] = tuple(d["modalities"])
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def desk_config(vocab_size: int, **overrides) -> ModelConfig:
    """Small configuration that trains on a laptop CPU in minutes."""
    base = dict(
        vocab_size=vocab_size,
        d_model=64,
        heads=8,
        decoder_layers=2,
        tubelet=4,
        patch=32,
        backbone_blocks=2,
    )
    base.update(overrides)
    return ModelConfig(**base)


def tiny_config(vocab_size: int = 11, **overrides) -> ModelConfig:
    """Gradient-check scale: N = 4 visual tokens, T = 2 frames (3T = 6 modality tokens)."""
    base = dict(
        vocab_size=vocab_size,
        d_model=8,
        heads=2,
        decoder_layers=1,
        frames=2,
        image_size=32,
        tubelet=2,
        patch=16,
        backbone_blocks=1,
        n_keypoints=3,
        max_len=8,
        ffn_mult=2,
        init_std=0.3,
    )
    base.update(overrides)
    return ModelConfig(**base)
