"""Shot captioner: backbone -> token refiner -> multimodal fusion -> decoder -> semantic feedback."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

from bfmd.errors import AllPadded, SequenceTooLong
from bfmd.model.backbone import DeskBackbone
from bfmd.model.config import MODALITIES, ModelConfig
from bfmd.model.layers import FeedForward, MultiHeadAttention, init_weights
from bfmd.pipeline.vocab import BOS, EOS, PAD


class TokenRefiner(nn.Module):
    """LayerNorm(M + MHSA(M)), applied ``layers`` times."""

    def __init__(self, d_model: int, heads: int, layers: int = 1, dropout: float = 0.0):
        super().__init__()
        self.drop = nn.Dropout(dropout)
        self.attn = nn.ModuleList(MultiHeadAttention(d_model, heads) for _ in range(layers))
        self.norm = nn.ModuleList(nn.LayerNorm(d_model) for _ in range(layers))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for attn, norm in zip(self.attn, self.norm):
            x = norm(x + self.drop(attn(x, x)))
        return x


class ModalityEncoder(nn.Module):
    """Per-frame 2-layer MLPs for positions, poses and shuttle, concatenated as [pos | pose | shuttle].

    Weights use a 1/sqrt(fan_in) truncated normal rather than the global 0.02:
    with fan-in as small as 2, the global scale shrinks coordinate inputs by
    about three orders of magnitude and the modality path barely trains.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.d_model
        self.mlp_pos = FeedForward(4, d, d)
        self.mlp_pose = FeedForward(4 * cfg.n_keypoints, d, d)
        self.mlp_shuttle = FeedForward(2, d, d)

    def reset_parameters(self) -> None:
        for m in self.modules():
            if isinstance(m, nn.Linear):
                std = m.in_features**-0.5
                nn.init.trunc_normal_(m.weight, std=std, a=-2 * std, b=2 * std)
                nn.init.zeros_(m.bias)

    def forward(self, pos: torch.Tensor, pose: torch.Tensor, shuttle: torch.Tensor) -> torch.Tensor:
        return torch.cat([self.mlp_pos(pos), self.mlp_pose(pose), self.mlp_shuttle(shuttle)], dim=1)


class MultimodalFusion(nn.Module):
    """M_s = MHSA(F_s) + F_s;  out = M~_v + alpha * CrossAttn(M~_v, M_s, M_s)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.token_embed = nn.Parameter(torch.zeros(1, 3 * cfg.frames, cfg.d_model))
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.heads)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.heads)

    def forward(self, grid: torch.Tensor, f_s: torch.Tensor, mask: torch.Tensor, alpha: float) -> torch.Tensor:
        if alpha == 0:
            return grid
        f_s = f_s + self.token_embed
        m_s = self.self_attn(f_s, f_s, key_mask=mask) + f_s
        delta = self.cross_attn(grid, m_s, key_mask=mask)
        return grid + alpha * delta


class DecoderLayer(nn.Module):
    def __init__(self, d_model: int, heads: int, ffn_mult: int, dropout: float = 0.0):
        super().__init__()
        self.drop = nn.Dropout(dropout)
        self.self_attn = MultiHeadAttention(d_model, heads)
        self.norm1 = nn.LayerNorm(d_model)
        self.cross_attn = MultiHeadAttention(d_model, heads)
        self.norm2 = nn.LayerNorm(d_model)
        self.ffn = FeedForward(d_model, ffn_mult * d_model, d_model)
        self.norm3 = nn.LayerNorm(d_model)

    def forward(self, x: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
        x = self.norm1(x + self.drop(self.self_attn(x, x, causal=True)))
        x = self.norm2(x + self.drop(self.cross_attn(x, memory)))
        return self.norm3(x + self.drop(self.ffn(x)))


class CaptionDecoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.max_len = cfg.max_len
        self.drop = nn.Dropout(cfg.dropout)
        self.embed = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.pos = nn.Parameter(torch.zeros(1, cfg.max_len, cfg.d_model))
        self.layers = nn.ModuleList(
            DecoderLayer(cfg.d_model, cfg.heads, cfg.ffn_mult, cfg.dropout) for _ in range(cfg.decoder_layers)
        )

    def forward(self, tokens: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
        L = tokens.shape[1]
        if L > self.max_len:
            raise SequenceTooLong(f"caption of {L} tokens exceeds max_len {self.max_len}")
        x = self.drop(self.embed(tokens) + self.pos[:, :L])
        for layer in self.layers:
            x = layer(x, memory)
        return x


class SemanticHead(nn.Module):
    """Pooled decoder state -> K attribute logits -> feedback correction beta * W_2 GELU(W_1 sigmoid(S))."""

    def __init__(self, d_model: int, k: int, beta_init: float):
        super().__init__()
        self.w_s = nn.Linear(d_model, k, bias=False)
        self.w_1 = nn.Linear(k, d_model, bias=False)
        self.w_2 = nn.Linear(d_model, d_model, bias=False)
        self.beta = nn.Parameter(torch.tensor(float(beta_init)))

    @staticmethod
    def pool(hidden: torch.Tensor, valid: torch.Tensor, prefix: bool = False) -> torch.Tensor:
        """Masked mean over non-pad positions; with ``prefix`` a running mean per position."""
        counts = valid.sum(dim=1)
        if (counts == 0).any():
            raise AllPadded("semantic pooling needs at least one non-pad position per row")
        w = valid.to(hidden.dtype).unsqueeze(-1)
        if not prefix:
            return (hidden * w).sum(dim=1) / counts.to(hidden.dtype)[:, None]
        running = torch.cumsum(hidden * w, dim=1)
        n = torch.cumsum(w, dim=1).clamp_min(1.0)
        return running / n

    def feedback(self, p: torch.Tensor) -> torch.Tensor:
        return self.w_2(F.gelu(self.w_1(p)))

    def forward(self, hidden: torch.Tensor, valid: torch.Tensor, prefix: bool = False):
        """Return (H', S, P, z, delta_h).

        ``valid`` (B, L) is True at non-pad positions.  S and P always come from
        the pool over the whole caption.  With ``prefix`` the correction at
        position t uses only states 1..t, otherwise one correction is broadcast.
        """
        z = self.pool(hidden, valid)
        s = self.w_s(z)
        p = torch.sigmoid(s)
        if prefix:
            delta = self.feedback(torch.sigmoid(self.w_s(self.pool(hidden, valid, prefix=True))))
            return hidden + self.beta * delta, s, p, z, delta
        delta = self.feedback(p)
        return hidden + self.beta * delta.unsqueeze(1), s, p, z, delta


@dataclass
class ModelInputs:
    """One batch of model inputs.

    ``visual`` is either raw clips (B, T, H, W, 3) or, when ``visual_is_prefix``,
    the cached output of the backbone's frozen prefix (B, N, D).
    """

    visual: torch.Tensor
    pos: torch.Tensor  # (B, T, 4)
    pose: torch.Tensor  # (B, T, 4 * K_p)
    shuttle: torch.Tensor  # (B, T, 2)
    mod_mask: torch.Tensor  # (B, 3T) True = missing
    visual_is_prefix: bool = False

    def to(self, dtype: torch.dtype) -> "ModelInputs":
        v = self.visual if self.visual.dtype == torch.uint8 else self.visual.to(dtype)
        return ModelInputs(v, self.pos.to(dtype), self.pose.to(dtype), self.shuttle.to(dtype), self.mod_mask, self.visual_is_prefix)

    def select(self, idx) -> "ModelInputs":
        return ModelInputs(
            self.visual[idx], self.pos[idx], self.pose[idx], self.shuttle[idx], self.mod_mask[idx], self.visual_is_prefix
        )


@dataclass
class ForwardOutput:
    logits: torch.Tensor  # (B, L, V)
    hidden: torch.Tensor  # decoder states before feedback
    sem_logits: torch.Tensor | None
    sem_probs: torch.Tensor | None


class ShotCaptioner(nn.Module):
    def __init__(self, cfg: ModelConfig, backbone: nn.Module | None = None):
        super().__init__()
        self.cfg = cfg
        self.backbone = backbone if backbone is not None else DeskBackbone(cfg)
        self.refiner = TokenRefiner(cfg.d_model, cfg.heads, cfg.refiner_layers, cfg.dropout) if cfg.use_refiner else None
        self.modality = ModalityEncoder(cfg)
        self.fusion = MultimodalFusion(cfg)
        self.decoder = CaptionDecoder(cfg)
        self.semantic = SemanticHead(cfg.d_model, cfg.semantic_k, cfg.beta_init) if cfg.use_sf else None
        self.vocab_proj = nn.Linear(cfg.d_model, cfg.vocab_size)
        init_weights(self, cfg.init_std)
        self.modality.reset_parameters()
        for p in (self.backbone.pos_embed, self.fusion.token_embed, self.decoder.pos):
            nn.init.trunc_normal_(p, std=cfg.init_std, a=-2 * cfg.init_std, b=2 * cfg.init_std)
        if self.semantic is not None:
            with torch.no_grad():
                self.semantic.beta.fill_(cfg.beta_init)
        self.apply_freeze_policy()

    def apply_freeze_policy(self) -> None:
        for p in self.backbone.frozen_parameters():
            p.requires_grad_(False)

    def frozen_parameter_names(self) -> list[str]:
        frozen = {id(p) for p in self.backbone.frozen_parameters()}
        return [n for n, p in self.named_parameters() if id(p) in frozen]

    def trainable_named_parameters(self):
        return [(n, p) for n, p in self.named_parameters() if p.requires_grad]

    # -- stages ---------------------------------------------------------

    def encode_video(self, visual: torch.Tensor, is_prefix: bool = False) -> torch.Tensor:
        if is_prefix:
            return self.backbone.trainable_suffix(visual)
        return self.backbone(visual)

    def refine_tokens(self, grid: torch.Tensor) -> torch.Tensor:
        return grid if self.refiner is None else self.refiner(grid)

    def embed_modalities(self, inputs: ModelInputs) -> tuple[torch.Tensor, torch.Tensor]:
        """Return (F_s, mask) with disabled modality blocks fully masked."""
        f_s = self.modality(inputs.pos, inputs.pose, inputs.shuttle)
        mask = inputs.mod_mask.clone()
        T = self.cfg.frames
        for i, name in enumerate(MODALITIES):
            if name not in self.cfg.modalities:
                mask[:, i * T : (i + 1) * T] = True
        return f_s, mask

    def fuse(self, grid: torch.Tensor, f_s: torch.Tensor, mask: torch.Tensor, alpha: float | None = None) -> torch.Tensor:
        return self.fusion(grid, f_s, mask, self.cfg.alpha if alpha is None else alpha)

    def memory(self, inputs: ModelInputs) -> torch.Tensor:
        grid = self.refine_tokens(self.encode_video(inputs.visual, inputs.visual_is_prefix))
        f_s, mask = self.embed_modalities(inputs)
        return self.fuse(grid, f_s, mask)

    def decode(self, memory: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
        return self.decoder(tokens, memory)

    def head(self, hidden: torch.Tensor, valid: torch.Tensor, feedback: bool = True) -> ForwardOutput:
        if self.semantic is None:
            return ForwardOutput(self.vocab_proj(hidden), hidden, None, None)
        refined, s, p, _, _ = self.semantic(hidden, valid, prefix=self.cfg.sf_pooling == "prefix")
        out = refined if feedback else hidden
        return ForwardOutput(self.vocab_proj(out), hidden, s, p)

    def forward(self, inputs: ModelInputs, tokens: torch.Tensor) -> ForwardOutput:
        """Teacher-forced pass over decoder inputs ``tokens`` (B, L), PAD-padded."""
        hidden = self.decode(self.memory(inputs), tokens)
        return self.head(hidden, tokens != PAD)

    @torch.no_grad()
    def generate(self, inputs: ModelInputs, max_len: int | None = None) -> list[list[int]]:
        """Greedy decoding from BOS; semantic feedback pools the generated prefix each step."""
        max_len = min(max_len or self.cfg.max_len, self.cfg.max_len)
        memory = self.memory(inputs)
        B = memory.shape[0]
        seqs = torch.full((B, 1), BOS, dtype=torch.long)
        done = torch.zeros(B, dtype=torch.bool)
        while seqs.shape[1] < max_len and not bool(done.all()):
            hidden = self.decode(memory, seqs)
            valid = torch.ones(seqs.shape, dtype=torch.bool)
            out = self.head(hidden, valid, feedback=self.cfg.sf_at_inference)
            nxt = out.logits[:, -1].argmax(dim=-1)
            nxt = torch.where(done, torch.full_like(nxt, PAD), nxt)
            seqs = torch.cat([seqs, nxt[:, None]], dim=1)
            done |= nxt == EOS
        result = []
        for row in seqs.tolist():
            if EOS in row:
                row = row[: row.index(EOS) + 1]
            result.append(row)
        return result

    @torch.no_grad()
    def semantic_predictions(self, inputs: ModelInputs, sequences: list[list[int]]) -> torch.Tensor | None:
        """Attribute probabilities pooled over each generated caption (without its final EOS)."""
        if self.semantic is None:
            return None
        memory = self.memory(inputs)
        L = max(len(s) for s in sequences)
        tokens = torch.full((len(sequences), L), PAD, dtype=torch.long)
        for i, s in enumerate(sequences):
            body = s[:-1] if len(s) > 1 and s[-1] == EOS else s
            tokens[i, : len(body)] = torch.tensor(body)
        hidden = self.decode(memory, tokens)
        _, _, p, _, _ = self.semantic(hidden, tokens != PAD)
        return p
