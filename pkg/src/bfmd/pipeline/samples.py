from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from bfmd.annotations.schema import HitEvent, MatchRecord, RallyRecord
from bfmd.annotations.semantics import Lexicon, derive_semantic_vector
from bfmd.errors import ModalityGap, SchemaViolation
from bfmd.pipeline.clipio import read_clip
from bfmd.pipeline.modality import ModalityTrack
from bfmd.pipeline.vocab import BOS, EOS, Vocabulary
from bfmd.pipeline.windows import WINDOW, clip_window

MAX_CAPTION_TOKENS = 120
CLIP_SIZE = 224
MAX_MISSING_BOX_FRAMES = 8


class ClipRef(Protocol):
    def load(self) -> np.ndarray: ...


@dataclass(frozen=True)
class FileClipRef:
    path: Path

    def load(self) -> np.ndarray:
        return read_clip(self.path)


@dataclass(frozen=True)
class RenderedClipRef:
    """Clip produced on demand by a deterministic renderer."""

    render: Callable[[], np.ndarray]
    key: str = ""

    def load(self) -> np.ndarray:
        return self.render()


def clip_filename(rally_id: str, hit_frame: int) -> str:
    return f"{rally_id}_{hit_frame:07d}.clip"


@dataclass(frozen=True)
class ShotSample:
    sample_id: str
    match_id: str
    rally_id: str
    hit_frame: int
    frame_window: tuple[int, ...]
    clip: ClipRef
    modalities: ModalityTrack
    caption: str
    caption_tokens: tuple[int, ...]
    shot_type: str
    semantic_target: tuple[int, ...]

    def __post_init__(self):
        if len(self.frame_window) != WINDOW:
            raise ValueError(f"window must have {WINDOW} frames")
        t = self.caption_tokens
        if len(t) < 2 or t[0] != BOS or t[-1] != EOS or len(t) > MAX_CAPTION_TOKENS:
            raise ValueError("caption tokens must be BOS ... EOS with at most 120 tokens")


def build_sample(
    match: MatchRecord,
    rally: RallyRecord,
    hit: HitEvent,
    track: ModalityTrack,
    vocab: Vocabulary,
    clip: ClipRef,
    lexicon: Lexicon | None = None,
) -> ShotSample:
    seg = dict((r.rally_id, s) for r, s in match.rally_spans()).get(rally.rally_id)
    if seg is None:
        raise SchemaViolation(f"/rallies/{rally.rally_id}", "rally has no matching rally segment")
    frames = clip_window(hit.frame, seg.start_frame, seg.end_frame)
    window = track.window(frames)
    missing = (~window.player_present).sum(axis=0)
    if (missing > MAX_MISSING_BOX_FRAMES).any():
        raise ModalityGap(
            f"{rally.rally_id}@{hit.frame}: player box missing on {int(missing.max())} of {WINDOW} frames"
        )
    target = hit.shot.semantic_target or derive_semantic_vector(hit.shot, lexicon)
    return ShotSample(
        sample_id=f"{rally.rally_id}@{hit.frame}",
        match_id=match.match_id,
        rally_id=rally.rally_id,
        hit_frame=hit.frame,
        frame_window=tuple(frames),
        clip=clip,
        modalities=window,
        caption=hit.shot.caption,
        caption_tokens=tuple(vocab.tokenize(hit.shot.caption, MAX_CAPTION_TOKENS)),
        shot_type=hit.shot.shot_type,
        semantic_target=tuple(target),
    )


def samples_from_dirs(
    matches: list[MatchRecord],
    modality_dir: Path,
    clips_dir: Path,
    vocab: Vocabulary,
    lexicon: Lexicon | None = None,
    disciplines: tuple[str, ...] = ("singles",),
) -> list[ShotSample]:
    """Build every shot sample of the given matches from on-disk sidecars and clips."""
    from bfmd.pipeline.modality import load_sidecar

    out = []
    for m in matches:
        if m.discipline not in disciplines:
            continue
        for rally in m.rallies:
            track = load_sidecar(Path(modality_dir) / f"{rally.rally_id}.json")
            for hit in rally.hits:
                ref = FileClipRef(Path(clips_dir) / clip_filename(rally.rally_id, hit.frame))
                out.append(build_sample(m, rally, hit, track, vocab, ref, lexicon))
    return out
