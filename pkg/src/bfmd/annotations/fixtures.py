"""Deterministic annotation fixtures whose aggregate counts mirror the reference dataset statistics.

The generated matches are structurally valid (they pass ``validate_match``)
but carry placeholder captions; they exist to exercise the statistics path
at full dataset scale.
"""

from __future__ import annotations

from bfmd.annotations.schema import (
    SHOT_TYPES,
    HitEvent,
    MatchRecord,
    RallyRecord,
    Segment,
    ShotAnnotation,
)

REFERENCE_COUNTS = {
    "singles": {
        "matches": 12,
        "hours": 13.306,
        "rallies": 1054,
        "replays": 514,
        "hawkeye": 38,
        "hits": 11301,
        "net_hits": 210,
        "landings": 973,
    },
    "doubles": {
        "matches": 7,
        "hours": 7.016,
        "rallies": 633,
        "replays": 281,
        "hawkeye": 14,
        "hits": 5450,
        "net_hits": 209,
        "landings": 583,
    },
}

FIXTURE_FPS = 30.0
_HIT_GAP = 30


def _spread(total: int, n: int) -> list[int]:
    base, rem = divmod(total, n)
    return [base + (1 if i < rem else 0) for i in range(n)]


def _build_match(match_id: str, discipline: str, total_frames: int, c: dict) -> MatchRecord:
    n_r = c["rallies"]
    hits_per = _spread(c["hits"], n_r)
    nets_per = _spread(c["net_hits"], n_r)
    has_landing = [i < c["landings"] for i in range(n_r)]
    has_replay = [i < c["replays"] for i in range(n_r)]
    has_hawk = [i < c["hawkeye"] for i in range(n_r)]

    segments, rallies = [], []
    cursor = 10
    for i in range(n_r):
        n_hits = hits_per[i]
        start = cursor
        end = start + _HIT_GAP * (n_hits + 1) + 20
        hits = []
        for k in range(n_hits):
            shot_type = SHOT_TYPES[(i + k) % len(SHOT_TYPES)] if k else "serve"
            hits.append(
                HitEvent(
                    frame=start + _HIT_GAP * (k + 1),
                    player_slot="near" if k % 2 == 0 else "far",
                    shot=ShotAnnotation(shot_type, f"[PLAYER] plays a {shot_type.replace('_', ' ')}."),
                )
            )
        nets = tuple(start + _HIT_GAP * (k + 1) + 5 for k in range(nets_per[i]))
        landing = (end - 5,) if has_landing[i] else ()
        rallies.append(RallyRecord(f"{match_id}-r{i:03d}", tuple(hits), nets, landing))
        segments.append(Segment("rally", start, end))
        cursor = end + 10
        if has_replay[i]:
            segments.append(Segment("replay", cursor, cursor + 200))
            cursor += 210
        if has_hawk[i]:
            segments.append(Segment("hawkeye", cursor, cursor + 150))
            cursor += 160
    if cursor >= total_frames:
        raise ValueError(f"{match_id}: timeline needs {cursor} frames, only {total_frames} available")
    return MatchRecord(match_id, discipline, FIXTURE_FPS, total_frames, tuple(segments), tuple(rallies))


def reference_fixture() -> list[MatchRecord]:
    """19 matches (12 singles, 7 doubles) reproducing the reference dataset counts."""
    matches = []
    for discipline, c in REFERENCE_COUNTS.items():
        n = c["matches"]
        total = round(c["hours"] * 3600 * FIXTURE_FPS)
        per_match = {key: _spread(c[key], n) for key in ("rallies", "replays", "hawkeye", "hits", "net_hits", "landings")}
        frames = _spread(total, n)
        for j in range(n):
            counts = {key: vals[j] for key, vals in per_match.items()}
            matches.append(_build_match(f"{discipline}-{j + 1:02d}", discipline, frames[j], counts))
    return matches
