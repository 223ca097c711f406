"""Synthetic shot corpus for desk-scale training.

The scene is a side view of the court: x runs along the court (near player
on the left, far player on the right, net at x = 112) and image y encodes
shuttle height (y = GROUND_Y - height).  Each shot type has a parametric
post-hit shuttle flight, the hitter drifts forward, back or not at all, and
the caption is drawn from a small template grammar whose keywords agree with
the semantic target derived from it.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from bfmd.annotations.schema import (
    SHOT_TYPES,
    HitEvent,
    MatchRecord,
    RallyRecord,
    Segment,
    ShotAnnotation,
)
from bfmd.annotations.semantics import Lexicon, derive_semantic_vector
from bfmd.pipeline.modality import N_KEYPOINTS, ModalityTrack
from bfmd.pipeline.samples import CLIP_SIZE, RenderedClipRef, ShotSample, build_sample
from bfmd.pipeline.vocab import Vocabulary
from bfmd.pipeline.windows import POST_HIT, PRE_HIT

GROUND_Y = 200.0
NET_X = 112.0
FPS = 30.0
HIT_SPACING = 30
BOX_W, BOX_H = 18.0, 46.0
DRIFT_SPEED = 1.2
REGION_DEPTH = {"forecourt": (10.0, 30.0), "mid_court": (38.0, 58.0), "backcourt": (66.0, 92.0)}


@dataclass(frozen=True)
class ShotProfile:
    trajectory: str
    intent: str | None
    regions: tuple[str, ...]
    contact_height: float
    flight_frames: int
    shape: str  # "descend" | "arc" | "flat"
    apex: float = 0.0


PROFILES: dict[str, ShotProfile] = {
    "serve": ShotProfile("soft_gentle_controlled", None, ("forecourt",), 25, 16, "arc", 40),
    "long_serve": ShotProfile("high_upward_arc", None, ("backcourt",), 25, 24, "arc", 150),
    "smash": ShotProfile("downward_steep", "attack_aggressive_finish", ("mid_court", "backcourt"), 75, 14, "descend"),
    "clear": ShotProfile("high_upward_arc", "defensive_recover_reset", ("backcourt",), 55, 24, "arc", 160),
    "drop": ShotProfile("soft_gentle_controlled", "pressure_disrupt", ("forecourt",), 60, 16, "arc", 35),
    "push": ShotProfile("flat_horizontal", "pressure_disrupt", ("mid_court",), 30, 14, "flat", 8),
    "net_shot": ShotProfile("soft_gentle_controlled", "pressure_disrupt", ("forecourt",), 12, 14, "arc", 25),
    "net_kill": ShotProfile("downward_steep", "attack_aggressive_finish", ("forecourt", "mid_court"), 45, 13, "descend"),
    "lift": ShotProfile("high_upward_arc", "defensive_recover_reset", ("backcourt",), 15, 22, "arc", 150),
    "drive": ShotProfile("flat_horizontal", "attack_aggressive_finish", ("mid_court", "backcourt"), 35, 12, "flat", 8),
    "block": ShotProfile("soft_gentle_controlled", "defensive_recover_reset", ("forecourt",), 20, 12, "arc", 25),
    "press": ShotProfile("downward_steep", "pressure_disrupt", ("forecourt", "mid_court"), 40, 13, "descend"),
}


@dataclass(frozen=True)
class CaptionGrammar:
    """Template: ``[PLAYER] <move> <verb> <trajectory> <shot> <region> <intent>.``"""

    move: dict[str, tuple[str, ...]] = field(
        default_factory=lambda: {
            "forward": ("moves forward", "steps in"),
            "back": ("moves back", "retreats"),
            "still": ("holds position", "stays set"),
        }
    )
    verb: tuple[str, ...] = ("and plays a", "and hits a", "and sends a")
    trajectory: dict[str, tuple[str, ...]] = field(
        default_factory=lambda: {
            "high_upward_arc": ("high arcing", "high"),
            "downward_steep": ("steep downward", "steep"),
            "flat_horizontal": ("flat", "fast flat"),
            "soft_gentle_controlled": ("soft", "gentle"),
        }
    )
    region: dict[str, tuple[str, ...]] = field(
        default_factory=lambda: {
            "forecourt": ("into the forecourt", "toward the forecourt"),
            "mid_court": ("into the mid-court", "toward the mid-court"),
            "backcourt": ("deep into the backcourt", "toward the backcourt"),
        }
    )
    intent: dict[str, tuple[str, ...]] = field(
        default_factory=lambda: {
            "attack_aggressive_finish": ("to attack", "to finish the rally"),
            "defensive_recover_reset": ("to reset the rally", "to recover"),
            "pressure_disrupt": ("to pressure the opponent", "to disrupt the opponent"),
        }
    )

    def caption(self, rng: random.Random, shot_type: str, movement: str, region: str) -> str:
        p = PROFILES[shot_type]
        parts = [
            "[PLAYER]",
            rng.choice(self.move[movement]),
            rng.choice(self.verb),
            rng.choice(self.trajectory[p.trajectory]),
            shot_type.replace("_", " "),
            rng.choice(self.region[region]),
        ]
        if p.intent is not None:
            parts.append(rng.choice(self.intent[p.intent]))
        return " ".join(parts) + "."


def shuttle_height(profile: ShotProfile, t: np.ndarray) -> np.ndarray:
    """Height above ground after contact at t = 0, flat on the floor after landing."""
    s = np.clip(t / profile.flight_frames, 0.0, 1.0)
    h0 = profile.contact_height
    if profile.shape == "descend":
        h = h0 * (1.0 - s)
    else:
        h = h0 * (1.0 - s) + 4.0 * profile.apex * s * (1.0 - s)
    return np.where(t < 0, h0 + 3.0 * np.abs(t), h)


_POSE_TEMPLATE = np.array(
    [
        (0.5, 0.08), (0.45, 0.06), (0.55, 0.06), (0.4, 0.08), (0.6, 0.08),
        (0.3, 0.22), (0.7, 0.22), (0.2, 0.38), (0.8, 0.38), (0.15, 0.52), (0.85, 0.52),
        (0.38, 0.55), (0.62, 0.55), (0.38, 0.77), (0.62, 0.77), (0.38, 0.98), (0.62, 0.98),
    ]
)
_SWING = {8: (0.85, 0.05), 10: (0.9, -0.1)}


@dataclass(frozen=True)
class _Shot:
    shot_type: str
    slot: str
    movement: str
    region: str
    x_hitter: float
    x_other: float
    landing_x: float
    jump: float
    missing_shuttle: tuple[int, ...]


def _shot_geometry(shot: _Shot, rng: np.random.Generator):
    """Window-relative tracks: bbox (T,2,4), pose (T,2,K,2), shuttle (T,2)."""
    t = np.arange(-PRE_HIT, POST_HIT + 1, dtype=float)
    T = len(t)
    p = PROFILES[shot.shot_type]
    toward_net = 1.0 if shot.slot == "near" else -1.0
    drift = {"forward": 1.0, "back": -1.0, "still": 0.0}[shot.movement] * toward_net * DRIFT_SPEED
    hitter_idx = 0 if shot.slot == "near" else 1

    xs = np.zeros((T, 2))
    xs[:, hitter_idx] = shot.x_hitter + drift * t
    xs[:, 1 - hitter_idx] = shot.x_other + 0.3 * np.sin(t / 3.0)
    lift = np.zeros((T, 2))
    lift[:, hitter_idx] = shot.jump * np.exp(-0.5 * (t / 2.0) ** 2)

    bbox = np.stack(
        [xs - BOX_W / 2, GROUND_Y - lift - BOX_H, xs + BOX_W / 2, GROUND_Y - lift], axis=-1
    )
    pose = np.empty((T, 2, N_KEYPOINTS, 2))
    for k in range(T):
        for s in range(2):
            tpl = _POSE_TEMPLATE.copy()
            if s == hitter_idx and -1 <= t[k] <= 2:
                for j, uv in _SWING.items():
                    tpl[j] = uv
            x1, y1, x2, y2 = bbox[k, s]
            pose[k, s, :, 0] = x1 + tpl[:, 0] * (x2 - x1)
            pose[k, s, :, 1] = y1 + tpl[:, 1] * (y2 - y1)
    pose += rng.normal(0.0, 0.3, size=pose.shape)

    x_contact = shot.x_hitter
    frac = np.clip(t / p.flight_frames, 0.0, 1.0)
    sx = np.where(t < 0, x_contact - toward_net * 6.0 * np.abs(t), x_contact + (shot.landing_x - x_contact) * frac)
    sy = GROUND_Y - shuttle_height(p, t)
    shuttle = np.stack([sx, sy], axis=-1)
    return bbox, pose, shuttle


def render_clip(bbox: np.ndarray, shuttle: np.ndarray, size: int = CLIP_SIZE) -> np.ndarray:
    """Dark court, grey net and floor, coloured player boxes, bright shuttle blob."""
    T = len(bbox)
    clip = np.full((T, size, size, 3), 16, dtype=np.uint8)
    clip[:, int(GROUND_Y) : int(GROUND_Y) + 2, :, :] = 60
    clip[:, 150 : int(GROUND_Y), int(NET_X) - 1 : int(NET_X) + 2, :] = 120
    colours = (np.array([200, 70, 60], np.uint8), np.array([60, 80, 200], np.uint8))
    yy, xx = np.mgrid[0:size, 0:size]
    for k in range(T):
        for s in range(2):
            x1, y1, x2, y2 = (int(round(v)) for v in bbox[k, s])
            clip[k, max(y1, 0) : max(min(y2, size), 0), max(x1, 0) : max(min(x2, size), 0)] = colours[s]
        cx, cy = shuttle[k]
        blob = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * 2.0**2))
        frame = clip[k].astype(np.float32)
        frame = np.maximum(frame, 255.0 * blob[..., None])
        clip[k] = frame.astype(np.uint8)
    return clip


@dataclass
class SynthCorpus:
    matches: list[MatchRecord]
    tracks: dict[str, ModalityTrack]
    samples: list[ShotSample]
    vocab: Vocabulary
    clips: dict[str, tuple[np.ndarray, np.ndarray]]  # sample_id -> (bbox, shuttle) render inputs


def synth_generate(
    seed: int,
    n: int,
    grammar: CaptionGrammar | None = None,
    rallies_per_match: int = 40,
    missing_shuttle_rate: float = 0.1,
    lexicon: Lexicon | None = None,
) -> SynthCorpus:
    if n < 1:
        raise ValueError("n must be >= 1")
    grammar = grammar or CaptionGrammar()
    rng = random.Random(seed)
    nrng = np.random.default_rng(seed)

    rally_sizes = []
    left = n
    while left > 0:
        k = min(left, rng.randint(2, 6))
        rally_sizes.append(k)
        left -= k

    matches, tracks, clip_inputs = [], {}, {}
    match_rallies: list[list] = []
    for ri, size in enumerate(rally_sizes):
        mi = ri // rallies_per_match
        if mi == len(match_rallies):
            match_rallies.append([])
        match_rallies[mi].append(size)

    for mi, sizes in enumerate(match_rallies):
        match_id = f"synth-{seed}-{mi:03d}"
        cursor = 50
        segments, rallies = [], []
        for ri, size in enumerate(sizes):
            rally_id = f"{match_id}-r{ri:03d}"
            start = cursor
            first_hit = start + 10
            hits, frames_all = [], []
            bbox_all, pose_all, shuttle_all, shuttle_ok_all = [], [], [], []
            last_profile = None
            for k in range(size):
                slot = "near" if k % 2 == 0 else "far"
                shot_type = rng.choice(SHOT_TYPES)
                p = PROFILES[shot_type]
                region = rng.choice(p.regions)
                movement = rng.choice(("forward", "back", "still"))
                toward_net = 1.0 if slot == "near" else -1.0
                base_near, base_far = rng.uniform(35.0, 75.0), rng.uniform(149.0, 189.0)
                x_hitter, x_other = (base_near, base_far) if slot == "near" else (base_far, base_near)
                depth = rng.uniform(*REGION_DEPTH[region])
                shot = _Shot(
                    shot_type=shot_type,
                    slot=slot,
                    movement=movement,
                    region=region,
                    x_hitter=x_hitter,
                    x_other=x_other,
                    landing_x=NET_X + toward_net * depth,
                    jump=12.0 if shot_type in ("smash", "net_kill") else 0.0,
                    missing_shuttle=tuple(
                        i for i in range(PRE_HIT + POST_HIT + 1) if rng.random() < missing_shuttle_rate
                    ),
                )
                caption = grammar.caption(rng, shot_type, movement, region)
                hit_frame = first_hit + k * HIT_SPACING
                bbox, pose, shuttle = _shot_geometry(shot, nrng)
                ok = np.ones(len(bbox), dtype=bool)
                ok[list(shot.missing_shuttle)] = False
                frames_all.extend(range(hit_frame - PRE_HIT, hit_frame + POST_HIT + 1))
                bbox_all.append(bbox)
                pose_all.append(pose)
                shuttle_all.append(shuttle)
                shuttle_ok_all.append(ok)
                clip_inputs[f"{rally_id}@{hit_frame}"] = (bbox, shuttle)
                shot_ann = ShotAnnotation(shot_type, caption)
                shot_ann = ShotAnnotation(shot_type, caption, derive_semantic_vector(shot_ann, lexicon))
                hits.append(HitEvent(hit_frame, slot, shot_ann))
                last_profile = p
            last_hit = hits[-1].frame
            end = last_hit + 40
            landing = (last_hit + last_profile.flight_frames,)
            segments.append(Segment("rally", start, end))
            rallies.append(RallyRecord(rally_id, tuple(hits), (), landing))
            bbox_cat = np.concatenate(bbox_all)
            shuttle_ok = np.concatenate(shuttle_ok_all)
            shuttle_cat = np.concatenate(shuttle_all)
            tracks[rally_id] = ModalityTrack(
                tuple(frames_all),
                bbox_cat,
                np.concatenate(pose_all),
                np.ones(bbox_cat.shape[:2], dtype=bool),
                np.where(shuttle_ok[:, None], shuttle_cat, np.nan),
                shuttle_ok,
                rally_id,
            )
            cursor = end + 20
            if ri % 5 == 4:
                segments.append(Segment("replay", cursor, cursor + 150))
                cursor += 170
        matches.append(MatchRecord(match_id, "singles", FPS, cursor + 100, tuple(segments), tuple(rallies)))

    vocab = Vocabulary.build(h.shot.caption for m in matches for r in m.rallies for h in r.hits)
    samples = []
    for m in matches:
        for rally in m.rallies:
            for hit in rally.hits:
                sid = f"{rally.rally_id}@{hit.frame}"
                bbox, shuttle = clip_inputs[sid]
                ref = RenderedClipRef(partial(render_clip, bbox, shuttle), key=sid)
                samples.append(build_sample(m, rally, hit, tracks[rally.rally_id], vocab, ref, lexicon))
    return SynthCorpus(matches, tracks, samples, vocab, clip_inputs)

