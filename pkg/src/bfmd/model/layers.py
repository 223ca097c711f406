from __future__ import annotations

import math

import torch
from torch import nn
from torch.nn import functional as F


def init_weights(module: nn.Module, std: float) -> None:
    """Truncated-normal projections, zero biases, unit LayerNorm gains."""
    for m in module.modules():
        if isinstance(m, nn.Linear):
            nn.init.trunc_normal_(m.weight, std=std, a=-2 * std, b=2 * std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.Embedding):
            nn.init.trunc_normal_(m.weight, std=std, a=-2 * std, b=2 * std)
        elif isinstance(m, nn.LayerNorm):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention with explicit W^Q, W^K, W^V, W^O.

    ``key_mask`` (B, Nk) marks keys that must receive exactly zero weight.
    Query rows whose keys are all masked produce zero output.
    """

    def __init__(self, d_model: int, heads: int):
        super().__init__()
        self.heads = heads
        self.d_k = d_model // heads
        self.w_q = nn.Linear(d_model, d_model, bias=False)
        self.w_k = nn.Linear(d_model, d_model, bias=False)
        self.w_v = nn.Linear(d_model, d_model, bias=False)
        self.w_o = nn.Linear(d_model, d_model, bias=False)
        self.last_probs: torch.Tensor | None = None
        self.record = False

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        B, N, _ = x.shape
        return x.view(B, N, self.heads, self.d_k).transpose(1, 2)

    def forward(
        self,
        query: torch.Tensor,
        key_value: torch.Tensor,
        key_mask: torch.Tensor | None = None,
        causal: bool = False,
    ) -> torch.Tensor:
        q = self._split(self.w_q(query))
        k = self._split(self.w_k(key_value))
        v = self._split(self.w_v(key_value))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_k)

        blocked = None
        if key_mask is not None:
            blocked = key_mask[:, None, None, :]
        if causal:
            Lq, Lk = scores.shape[-2:]
            tri = torch.ones(Lq, Lk, dtype=torch.bool, device=scores.device).triu(1)
            blocked = tri if blocked is None else blocked | tri
        if blocked is not None:
            scores = scores.masked_fill(blocked, torch.finfo(scores.dtype).min)
        probs = F.softmax(scores, dim=-1)
        if blocked is not None:
            probs = probs.masked_fill(blocked, 0.0)
        if self.record:
            self.last_probs = probs.detach()

        out = (probs @ v).transpose(1, 2).reshape(query.shape[0], query.shape[1], -1)
        return self.w_o(out)


class FeedForward(nn.Module):
    def __init__(self, d_in: int, d_hidden: int, d_out: int):
        super().__init__()
        self.fc1 = nn.Linear(d_in, d_hidden)
        self.fc2 = nn.Linear(d_hidden, d_out)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.gelu(self.fc1(x)))
