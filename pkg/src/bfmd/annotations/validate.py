from __future__ import annotations

import re
from dataclasses import asdict, dataclass

from bfmd.annotations.schema import PLAYER_TOKEN, SHOT_TYPES, MatchRecord
from bfmd.annotations.semantics import check_semantic_vector

_PLACEHOLDER = re.compile(r"\[[^\]]*\]")


@dataclass(frozen=True)
class Violation:
    severity: str  # "error" | "warn"
    rule_id: str
    path: str
    message: str

    def to_dict(self) -> dict:
        return asdict(self)


def validate_match(m: MatchRecord) -> list[Violation]:
    """Check frame-level consistency of a parsed match.

    Violations are returned, never raised.  Rallies are paired with rally
    segments by ordinal position.
    """
    out: list[Violation] = []

    def err(rule, path, msg):
        out.append(Violation("error", rule, path, msg))

    def warn(rule, path, msg):
        out.append(Violation("warn", rule, path, msg))

    prev_end = None
    for i, seg in enumerate(m.segments):
        path = f"/segments/{i}"
        if not seg.start_frame < seg.end_frame:
            err("segment-span", path, f"start_frame {seg.start_frame} must be < end_frame {seg.end_frame}")
        if seg.end_frame >= m.total_frames:
            err("segment-bounds", path, f"end_frame {seg.end_frame} outside [0, {m.total_frames})")
        if prev_end is not None and seg.start_frame <= prev_end:
            err("segment-order", path, "segments must be sorted and non-overlapping")
        prev_end = seg.end_frame if prev_end is None else max(prev_end, seg.end_frame)

    n_rally_segs = len(m.rally_segments())
    if n_rally_segs != len(m.rallies):
        err(
            "rally-segment-count",
            "/rallies",
            f"{len(m.rallies)} rallies but {n_rally_segs} rally segments",
        )

    seen_ids: set[str] = set()
    for ri, (rally, seg) in enumerate(m.rally_spans()):
        rpath = f"/rallies/{ri}"
        if rally.rally_id in seen_ids:
            err("rally-id-unique", f"{rpath}/rally_id", f"duplicate rally_id {rally.rally_id!r}")
        seen_ids.add(rally.rally_id)

        if not rally.hits:
            warn("empty-rally", f"{rpath}/hits", "rally has no hit events")
        if len(rally.landings) > 1:
            err("landing-at-most-one", f"{rpath}/landing", f"{len(rally.landings)} landing events")

        frames = [h.frame for h in rally.hits]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            err("hits-sorted", f"{rpath}/hits", "hit frames must be strictly increasing")
        for hi, (a, b) in enumerate(zip(rally.hits, rally.hits[1:]), start=1):
            if a.player_slot == b.player_slot:
                warn(
                    "player-alternation",
                    f"{rpath}/hits/{hi}/player_slot",
                    f"consecutive hits by the same slot {b.player_slot!r}",
                )

        if seg is not None:
            lo, hi_ = seg.start_frame, seg.end_frame
            events = [(f"{rpath}/hits/{k}/frame", h.frame) for k, h in enumerate(rally.hits)]
            events += [(f"{rpath}/net_hits/{k}", f) for k, f in enumerate(rally.net_hits)]
            events += [(f"{rpath}/landing", f) for f in rally.landings]
            for path, frame in events:
                if not lo <= frame <= hi_:
                    err("event-in-span", path, f"frame {frame} outside rally span [{lo}, {hi_}]")

        for k, h in enumerate(rally.hits):
            spath = f"{rpath}/hits/{k}/shot"
            if not h.shot.caption.strip():
                err("caption-nonempty", f"{spath}/caption", "caption is empty")
            for tok in _PLACEHOLDER.findall(h.shot.caption):
                if tok != PLAYER_TOKEN:
                    warn("placeholder-token", f"{spath}/caption", f"unexpected placeholder {tok}")
            target = h.shot.semantic_target
            if target is not None:
                for problem in check_semantic_vector(target):
                    err("semantic-target", f"{spath}/semantic_target", problem)
                if len(target) == 22 and target[SHOT_TYPES.index(h.shot.shot_type)] != 1:
                    err("semantic-target", f"{spath}/semantic_target", "category bit disagrees with shot_type")
    return out


def has_errors(violations: list[Violation]) -> bool:
    return any(v.severity == "error" for v in violations)
