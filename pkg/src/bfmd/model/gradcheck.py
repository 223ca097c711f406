"""Central finite differences against autograd for every trainable tensor."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from bfmd.model.captioner import ModelInputs, ShotCaptioner
from bfmd.model.config import ModelConfig, tiny_config
from bfmd.model.train import Batch, batch_losses


@dataclass(frozen=True)
class TensorCheck:
    name: str
    numel: int
    max_abs_error: float
    scale: float

    @property
    def rel_error(self) -> float:
        """max |analytic - numeric| over the tensor, relative to the larger max |gradient|."""
        return self.max_abs_error / max(self.scale, 1e-12)


def random_batch(cfg: ModelConfig, batch: int = 2, length: int = 5, seed: int = 0, dtype=torch.float64) -> Batch:
    """Random inputs with one missing modality token per row and one padded caption."""
    g = torch.Generator().manual_seed(seed)
    T = cfg.frames
    clip = torch.randint(0, 256, (batch, T, cfg.image_size, cfg.image_size, 3), generator=g, dtype=torch.uint8)
    mask = torch.zeros(batch, 3 * T, dtype=torch.bool)
    mask[:, -1] = True
    tokens = torch.randint(4, cfg.vocab_size, (batch, length + 1), generator=g)
    tokens[:, 0] = 1  # BOS
    tokens[-1, -2:] = 0  # last row shorter: PAD tail
    inputs = ModelInputs(
        visual=clip,
        pos=torch.rand(batch, T, 4, generator=g, dtype=dtype),
        pose=torch.rand(batch, T, 4 * cfg.n_keypoints, generator=g, dtype=dtype),
        shuttle=torch.rand(batch, T, 2, generator=g, dtype=dtype),
        mod_mask=mask,
    )
    sem = (torch.rand(batch, cfg.semantic_k, generator=g) > 0.5).to(dtype)
    return Batch(inputs, tokens[:, :-1].clone(), tokens[:, 1:].clone(), sem)


def check_gradients(model: ShotCaptioner, batch: Batch, eps: float = 1e-3) -> list[TensorCheck]:
    model.eval()
    params = model.trainable_named_parameters()
    model.zero_grad(set_to_none=True)
    batch_losses(model, batch)["L_total"].backward()
    analytic = {n: p.grad.detach().clone() for n, p in params}

    results = []
    with torch.no_grad():
        for name, p in params:
            flat = p.view(-1)
            numeric = torch.empty_like(flat)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = batch_losses(model, batch)["L_total"].item()
                flat[i] = orig - eps
                down = batch_losses(model, batch)["L_total"].item()
                flat[i] = orig
                numeric[i] = (up - down) / (2 * eps)
            a = analytic[name].view(-1)
            err = (a - numeric).abs().max().item()
            scale = max(a.abs().max().item(), numeric.abs().max().item())
            results.append(TensorCheck(name, flat.numel(), err, scale))
    return results


def tiny_gradcheck(seed: int = 0, eps: float = 1e-3, **overrides) -> list[TensorCheck]:
    """Float64 check on the tiny config (D=8, h=2, 1 decoder layer, V=11, N=4, 3T=6, B=2, L=5)."""
    torch.manual_seed(seed)
    cfg = tiny_config(**overrides)
    model = ShotCaptioner(cfg).double()
    return check_gradients(model, random_batch(cfg, seed=seed), eps=eps)
