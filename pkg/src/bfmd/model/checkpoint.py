"""Self-describing checkpoint container.

Layout: ``BFMDCKPT`` magic, little-endian u32 header length, UTF-8 JSON
header, then raw little-endian float32 tensor data.  The header carries the
model config, the vocabulary, the optimizer step and an index of
``{name, shape, offset}`` entries into the data section.  Optimizer moments
are stored as ``optim.exp_avg.<param>`` and ``optim.exp_avg_sq.<param>``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from bfmd.errors import CheckpointError
from bfmd.model.captioner import ShotCaptioner
from bfmd.model.config import ModelConfig
from bfmd.pipeline.vocab import Vocabulary

MAGIC = b"BFMDCKPT"
FORMAT_VERSION = 1


def _collect(model: ShotCaptioner, optimizer: torch.optim.Optimizer | None) -> tuple[dict[str, np.ndarray], int]:
    tensors = {k: v.detach().cpu().to(torch.float32).numpy() for k, v in model.state_dict().items()}
    step = 0
    if optimizer is not None:
        names = {id(p): n for n, p in model.named_parameters()}
        for group in optimizer.param_groups:
            for p in group["params"]:
                state = optimizer.state.get(p)
                if not state:
                    continue
                name = names[id(p)]
                tensors[f"optim.exp_avg.{name}"] = state["exp_avg"].detach().to(torch.float32).numpy()
                tensors[f"optim.exp_avg_sq.{name}"] = state["exp_avg_sq"].detach().to(torch.float32).numpy()
                step = int(state["step"])
    return tensors, step


def save_checkpoint(
    path,
    model: ShotCaptioner,
    vocab: Vocabulary,
    optimizer: torch.optim.Optimizer | None = None,
    extra: dict | None = None,
) -> None:
    tensors, step = _collect(model, optimizer)
    index, offset, chunks = [], 0, []
    for name in sorted(tensors):
        data = np.ascontiguousarray(tensors[name], dtype="<f4").tobytes()
        index.append({"name": name, "shape": list(tensors[name].shape), "offset": offset})
        chunks.append(data)
        offset += len(data)
    header = {
        "format": FORMAT_VERSION,
        "config": model.cfg.to_dict(),
        "vocab": json.loads(vocab.to_json()),
        "optimizer_step": step,
        "tensors": index,
        "extra": extra or {},
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for c in chunks:
            fh.write(c)
    tmp.replace(path)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Return (header, tensors) without building a model."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < 12 or raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (n,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12 : 12 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    data = memoryview(raw)[12 + n :]
    tensors = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        if start + 4 * count > len(data):
            raise CheckpointError(f"{path}: tensor {entry['name']} runs past end of file")
        arr = np.frombuffer(data[start : start + 4 * count], dtype="<f4").reshape(entry["shape"])
        tensors[entry["name"]] = arr.copy()
    return header, tensors


def load_checkpoint(path, optimizer_lr: float | None = None):
    """Rebuild (model, vocab, header); with ``optimizer_lr`` also an AdamW restored from the moments."""
    header, tensors = read_checkpoint(path)
    cfg = ModelConfig.from_dict(header["config"])
    vocab = Vocabulary.from_json(json.dumps(header["vocab"]))
    model = ShotCaptioner(cfg)
    state = model.state_dict()
    missing = [k for k in state if k not in tensors]
    if missing:
        raise CheckpointError(f"{path}: missing tensors {missing[:3]}")
    model.load_state_dict({k: torch.from_numpy(tensors[k]).to(state[k].dtype) for k in state})
    if optimizer_lr is None:
        return model, vocab, header
    params = dict(model.trainable_named_parameters())
    opt = torch.optim.AdamW(list(params.values()), lr=optimizer_lr, weight_decay=0.0)
    step = header["optimizer_step"]
    if step:
        for name, p in params.items():
            key = f"optim.exp_avg.{name}"
            if key in tensors:
                opt.state[p] = {
                    "step": torch.tensor(float(step)),
                    "exp_avg": torch.from_numpy(tensors[key]),
                    "exp_avg_sq": torch.from_numpy(tensors[f"optim.exp_avg_sq.{name}"]),
                }
    return model, vocab, header, opt
