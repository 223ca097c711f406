"""Pluggable video backbone.

Any module that maps a (B, T, H, W, 3) clip to (B, N, D) tokens and reports
which of its parameters stay frozen can stand in for the pretrained video
transformer.  The default desk backbone is tubelet patchify + linear embed +
learned positions + pre-norm self-attention blocks, randomly initialized.
"""

from __future__ import annotations

import torch
from torch import nn

from bfmd.errors import ShapeMismatch
from bfmd.model.config import ModelConfig
from bfmd.model.layers import FeedForward, MultiHeadAttention


class ViTBlock(nn.Module):
    def __init__(self, d_model: int, heads: int, ffn_mult: int, dropout: float = 0.0):
        super().__init__()
        self.drop = nn.Dropout(dropout)
        self.norm1 = nn.LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, heads)
        self.norm2 = nn.LayerNorm(d_model)
        self.mlp = FeedForward(d_model, ffn_mult * d_model, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x)
        x = x + self.drop(self.attn(h, h))
        return x + self.drop(self.mlp(self.norm2(x)))


class DeskBackbone(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.patch_embed = nn.Linear(cfg.patch_dim, cfg.d_model)
        self.pos_embed = nn.Parameter(torch.zeros(1, cfg.n_tokens, cfg.d_model))
        self.blocks = nn.ModuleList(
            ViTBlock(cfg.d_model, cfg.heads, cfg.ffn_mult, cfg.dropout) for _ in range(cfg.backbone_blocks)
        )
        self.norm = nn.LayerNorm(cfg.d_model)
        self.n_frozen_blocks = max(0, cfg.backbone_blocks - cfg.trainable_backbone_blocks)

    @property
    def n_tokens(self) -> int:
        return self.cfg.n_tokens

    def frozen_modules(self) -> list[nn.Module]:
        return [self.patch_embed, *self.blocks[: self.n_frozen_blocks]]

    def frozen_parameters(self) -> list[nn.Parameter]:
        params = [self.pos_embed]
        for m in self.frozen_modules():
            params.extend(m.parameters())
        return params

    def patchify(self, clip: torch.Tensor) -> torch.Tensor:
        """(B, T, H, W, 3) -> (B, N, tubelet*patch*patch*3), tubelet-major token order."""
        c = self.cfg
        B, T, H, W, C = clip.shape
        if (T, H, W, C) != (c.frames, c.image_size, c.image_size, 3):
            raise ShapeMismatch(
                f"clip shape {(T, H, W, C)} != configured {(c.frames, c.image_size, c.image_size, 3)}"
            )
        tp, p = c.tubelet, c.patch
        x = clip.reshape(B, T // tp, tp, H // p, p, W // p, p, C)
        x = x.permute(0, 1, 3, 5, 2, 4, 6, 7)
        return x.reshape(B, (T // tp) * (H // p) * (W // p), tp * p * p * C)

    def embed_patches(self, clip: torch.Tensor) -> torch.Tensor:
        if clip.dtype == torch.uint8:
            clip = clip.to(self.patch_embed.weight.dtype) / 255.0
        return self.patch_embed(self.patchify(clip))

    def frozen_prefix(self, clip: torch.Tensor) -> torch.Tensor:
        """Everything up to the first fine-tuned block (cacheable while frozen)."""
        x = self.embed_patches(clip) + self.pos_embed
        for blk in self.blocks[: self.n_frozen_blocks]:
            x = blk(x)
        return x

    def trainable_suffix(self, x: torch.Tensor) -> torch.Tensor:
        for blk in self.blocks[self.n_frozen_blocks :]:
            x = blk(x)
        return self.norm(x)

    def forward(self, clip: torch.Tensor) -> torch.Tensor:
        return self.trainable_suffix(self.frozen_prefix(clip))
