"""Batching, losses, optimizer steps and the per-step JSONL log."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch.nn import functional as F

from bfmd.errors import NonFiniteLoss
from bfmd.model.captioner import ForwardOutput, ModelInputs, ShotCaptioner
from bfmd.model.config import ModelConfig
from bfmd.pipeline.samples import ShotSample
from bfmd.pipeline.vocab import PAD


@dataclass
class Batch:
    inputs: ModelInputs
    dec_in: torch.Tensor  # (B, L) BOS w_1 ... w_n, PAD-padded
    targets: torch.Tensor  # (B, L) w_1 ... w_n EOS, PAD-padded
    sem_target: torch.Tensor  # (B, K) float 0/1
    sample_ids: tuple[str, ...] = ()

    def __len__(self) -> int:
        return self.dec_in.shape[0]


def modality_arrays(sample: ShotSample, cfg: ModelConfig) -> tuple[np.ndarray, ...]:
    """Per-frame MLP inputs and the 3T missing mask for one sample.

    A position or pose frame token is masked when both player boxes are
    missing; a single missing player contributes zeros.  Coordinates are
    mapped from [0, ``cfg.coord_scale``] to [-1, 1].
    """
    m = sample.modalities
    T = len(m.frames)
    if T != cfg.frames:
        raise ValueError(f"sample window has {T} frames, model expects {cfg.frames}")
    if m.n_keypoints != cfg.n_keypoints:
        raise ValueError(f"sample has {m.n_keypoints} keypoints, model expects {cfg.n_keypoints}")
    half = cfg.coord_scale / 2.0
    pos = np.nan_to_num(m.position.reshape(T, 4) / half - 1.0)
    pose = np.nan_to_num(m.pose.reshape(T, -1) / half - 1.0)
    shuttle = np.where(m.shuttle_present[:, None], np.nan_to_num(m.shuttle / half - 1.0), 0.0)
    no_player = ~m.player_present.any(axis=1)
    mask = np.concatenate([no_player, no_player, ~m.shuttle_present])
    return pos, pose, shuttle, mask


def pad_tokens(rows: Sequence[Sequence[int]]) -> torch.Tensor:
    L = max(len(r) for r in rows)
    out = torch.full((len(rows), L), PAD, dtype=torch.long)
    for i, r in enumerate(rows):
        out[i, : len(r)] = torch.tensor(list(r), dtype=torch.long)
    return out


class PrefixCache:
    """Outputs of the backbone's frozen prefix, keyed by sample id.

    Valid only while the prefix parameters stay frozen, which the freeze
    policy guarantees during training.
    """

    def __init__(self, model: ShotCaptioner):
        self.model = model
        self._store: dict[str, torch.Tensor] = {}

    def __len__(self) -> int:
        return len(self._store)

    @torch.no_grad()
    def get(self, samples: Sequence[ShotSample]) -> torch.Tensor:
        missing = [s for s in samples if s.sample_id not in self._store]
        for s in missing:
            clip = torch.from_numpy(np.array(s.clip.load()))[None]
            self._store[s.sample_id] = self.model.backbone.frozen_prefix(clip)[0]
        return torch.stack([self._store[s.sample_id] for s in samples])


def collate(samples: Sequence[ShotSample], cfg: ModelConfig, cache: PrefixCache | None = None) -> Batch:
    arrays = [modality_arrays(s, cfg) for s in samples]
    pos, pose, shuttle, mask = (np.stack(a) for a in zip(*arrays))
    if cache is not None:
        visual = cache.get(samples)
    else:
        visual = torch.from_numpy(np.stack([s.clip.load() for s in samples]))
    inputs = ModelInputs(
        visual=visual,
        pos=torch.tensor(pos, dtype=torch.float32),
        pose=torch.tensor(pose, dtype=torch.float32),
        shuttle=torch.tensor(shuttle, dtype=torch.float32),
        mod_mask=torch.tensor(mask, dtype=torch.bool),
        visual_is_prefix=cache is not None,
    )
    toks = [s.caption_tokens for s in samples]
    return Batch(
        inputs=inputs,
        dec_in=pad_tokens([t[:-1] for t in toks]),
        targets=pad_tokens([t[1:] for t in toks]),
        sem_target=torch.tensor([s.semantic_target for s in samples], dtype=torch.float32),
        sample_ids=tuple(s.sample_id for s in samples),
    )


def compute_losses(out: ForwardOutput, targets: torch.Tensor, sem_target: torch.Tensor | None, lam: float) -> dict:
    """L_cap (token CE ignoring PAD), L_sf (mean BCE over B x K) and L_total = L_cap + lam * L_sf."""
    V = out.logits.shape[-1]
    l_cap = F.cross_entropy(out.logits.reshape(-1, V), targets.reshape(-1), ignore_index=PAD)
    if out.sem_logits is None or sem_target is None:
        l_sf = torch.zeros((), dtype=l_cap.dtype)
    else:
        l_sf = F.binary_cross_entropy_with_logits(out.sem_logits, sem_target.to(out.sem_logits.dtype))
    return {"L_cap": l_cap, "L_sf": l_sf, "L_total": l_cap + lam * l_sf}


def batch_losses(model: ShotCaptioner, batch: Batch, lam: float | None = None) -> dict:
    out = model(batch.inputs, batch.dec_in)
    return compute_losses(out, batch.targets, batch.sem_target, model.cfg.lam if lam is None else lam)


class Trainer:
    """AdamW over trainable parameters (decoupled weight decay, 0 by default).

    ``lr`` is the initial rate; with ``total_steps`` it follows a cosine decay
    to zero over that many steps, otherwise it stays constant.
    """

    def __init__(
        self,
        model: ShotCaptioner,
        lr: float = 1e-4,
        weight_decay: float = 0.0,
        log_path: Path | None = None,
        total_steps: int | None = None,
    ):
        self.model = model
        self.lr = lr
        self.params = [p for _, p in model.trainable_named_parameters()]
        self.optimizer = torch.optim.AdamW(self.params, lr=lr, weight_decay=weight_decay)
        self.scheduler = None
        if total_steps:
            self.scheduler = torch.optim.lr_scheduler.LambdaLR(
                self.optimizer, lambda k: 0.5 * (1.0 + math.cos(math.pi * min(k, total_steps) / total_steps))
            )
        self.step_count = 0
        self.log_path = Path(log_path) if log_path is not None else None
        if self.log_path is not None:
            self.log_path.parent.mkdir(parents=True, exist_ok=True)
            self.log_path.write_text("")

    def beta(self) -> float | None:
        head = self.model.semantic
        return None if head is None else float(head.beta.detach())

    def train_step(self, batch: Batch) -> dict:
        self.model.train()
        self.optimizer.zero_grad(set_to_none=True)
        losses = batch_losses(self.model, batch)
        total = losses["L_total"]
        if not math.isfinite(float(total.detach())):
            raise NonFiniteLoss(f"step {self.step_count + 1}: L_total = {float(total.detach())}")
        total.backward()
        lr = self.optimizer.param_groups[0]["lr"]
        self.optimizer.step()
        if self.scheduler is not None:
            self.scheduler.step()
        self.step_count += 1
        record = {
            "step": self.step_count,
            "L_cap": float(losses["L_cap"].detach()),
            "L_sf": float(losses["L_sf"].detach()),
            "L_total": float(total.detach()),
            "beta": self.beta(),
            "lr": lr,
        }
        if self.log_path is not None:
            with self.log_path.open("a") as fh:
                fh.write(json.dumps(record) + "\n")
        return record

    @torch.no_grad()
    def evaluate(self, batches: Sequence[Batch]) -> dict:
        """Sample-weighted mean losses over ``batches``."""
        self.model.eval()
        sums = {"L_cap": 0.0, "L_sf": 0.0, "L_total": 0.0}
        n = 0
        for b in batches:
            losses = batch_losses(self.model, b)
            for k in sums:
                sums[k] += float(losses[k]) * len(b)
            n += len(b)
        return {k: v / max(n, 1) for k, v in sums.items()}


def batches_of(samples: Sequence[ShotSample], size: int, rng: np.random.Generator | None = None) -> list[list[ShotSample]]:
    order = np.arange(len(samples))
    if rng is not None:
        rng.shuffle(order)
    return [[samples[i] for i in order[j : j + size]] for j in range(0, len(order), size)]


def frozen_hash(model: ShotCaptioner) -> str:
    """Digest of every frozen tensor, to show the freeze policy held."""
    h = hashlib.sha256()
    for name, p in model.named_parameters():
        if not p.requires_grad:
            h.update(name.encode())
            h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()
