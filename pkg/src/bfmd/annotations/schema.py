"""Match annotation data model and its JSON serialization.

One JSON document describes one broadcast match: the segment timeline
(rally / replay / hawkeye) plus per-rally events (hits with shot labels,
net hits, shuttle landing).  Unknown keys at any level survive a
parse/serialize round trip through the ``extras`` maps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterator

import jsonschema

from bfmd.errors import MalformedDocument, SchemaViolation

SHOT_TYPES: tuple[str, ...] = (
    "serve",
    "long_serve",
    "smash",
    "clear",
    "drop",
    "push",
    "net_shot",
    "net_kill",
    "lift",
    "drive",
    "block",
    "press",
)
SEGMENT_KINDS = ("rally", "replay", "hawkeye")
DISCIPLINES = ("singles", "doubles")
PLAYER_SLOTS = ("near", "far")
PLAYER_TOKEN = "[PLAYER]"


@dataclass(frozen=True)
class Segment:
    kind: str
    start_frame: int
    end_frame: int
    extras: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ShotAnnotation:
    shot_type: str
    caption: str
    semantic_target: tuple[int, ...] | None = None
    extras: dict = field(default_factory=dict)


@dataclass(frozen=True)
class HitEvent:
    frame: int
    player_slot: str
    shot: ShotAnnotation
    extras: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RallyRecord:
    rally_id: str
    hits: tuple[HitEvent, ...] = ()
    net_hits: tuple[int, ...] = ()
    # More than one entry is representable so the validator can flag it.
    landings: tuple[int, ...] = ()
    winner_side: str | None = None
    extras: dict = field(default_factory=dict)

    @property
    def landing(self) -> int | None:
        return self.landings[0] if self.landings else None


@dataclass(frozen=True)
class MatchRecord:
    match_id: str
    discipline: str
    fps: float
    total_frames: int
    segments: tuple[Segment, ...] = ()
    rallies: tuple[RallyRecord, ...] = ()
    extras: dict = field(default_factory=dict)

    @property
    def duration_seconds(self) -> float:
        return self.total_frames / self.fps

    def rally_segments(self) -> list[Segment]:
        return [s for s in self.segments if s.kind == "rally"]

    def rally_spans(self) -> Iterator[tuple[RallyRecord, Segment | None]]:
        """Pair each rally with the rally segment at the same ordinal position."""
        segs = self.rally_segments()
        for i, rally in enumerate(self.rallies):
            yield rally, (segs[i] if i < len(segs) else None)


_FRAME = {"type": "integer", "minimum": 0}

MATCH_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["match_id", "discipline", "fps", "total_frames", "segments", "rallies"],
    "properties": {
        "match_id": {"type": "string", "minLength": 1},
        "discipline": {"enum": list(DISCIPLINES)},
        "fps": {"type": "number", "exclusiveMinimum": 0},
        "total_frames": _FRAME,
        "segments": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["kind", "start_frame", "end_frame"],
                "properties": {
                    "kind": {"enum": list(SEGMENT_KINDS)},
                    "start_frame": _FRAME,
                    "end_frame": _FRAME,
                },
            },
        },
        "rallies": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["rally_id", "hits"],
                "properties": {
                    "rally_id": {"type": "string", "minLength": 1},
                    "hits": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["frame", "player_slot", "shot"],
                            "properties": {
                                "frame": _FRAME,
                                "player_slot": {"enum": list(PLAYER_SLOTS)},
                                "shot": {
                                    "type": "object",
                                    "required": ["shot_type", "caption"],
                                    "properties": {
                                        "shot_type": {"enum": list(SHOT_TYPES)},
                                        "caption": {"type": "string"},
                                        "semantic_target": {
                                            "type": "array",
                                            "items": {"enum": [0, 1]},
                                        },
                                    },
                                },
                            },
                        },
                    },
                    "net_hits": {"type": "array", "items": _FRAME},
                    "landing": {
                        "oneOf": [
                            {"type": "null"},
                            _FRAME,
                            {"type": "array", "items": _FRAME},
                        ]
                    },
                    "winner_side": {"enum": [None, *PLAYER_SLOTS]},
                },
            },
        },
    },
}

_VALIDATOR = jsonschema.Draft202012Validator(MATCH_SCHEMA)


def _pointer(parts) -> str:
    return "".join("/" + str(p).replace("~", "~0").replace("/", "~1") for p in parts)


def _extras(obj: dict, known: set[str]) -> dict:
    return {k: v for k, v in obj.items() if k not in known}


def match_from_dict(doc: Any) -> MatchRecord:
    """Build a MatchRecord from decoded JSON, raising SchemaViolation on bad input."""
    errors = sorted(_VALIDATOR.iter_errors(doc), key=lambda e: (len(e.absolute_path), e.message))
    if errors:
        err = errors[0]
        raise SchemaViolation(_pointer(err.absolute_path), err.message)

    segments = tuple(
        Segment(
            kind=s["kind"],
            start_frame=s["start_frame"],
            end_frame=s["end_frame"],
            extras=_extras(s, {"kind", "start_frame", "end_frame"}),
        )
        for s in doc["segments"]
    )
    rallies = []
    for r in doc["rallies"]:
        hits = []
        for h in r["hits"]:
            s = h["shot"]
            target = s.get("semantic_target")
            shot = ShotAnnotation(
                shot_type=s["shot_type"],
                caption=s["caption"],
                semantic_target=tuple(target) if target is not None else None,
                extras=_extras(s, {"shot_type", "caption", "semantic_target"}),
            )
            hits.append(
                HitEvent(
                    frame=h["frame"],
                    player_slot=h["player_slot"],
                    shot=shot,
                    extras=_extras(h, {"frame", "player_slot", "shot"}),
                )
            )
        landing = r.get("landing")
        if landing is None:
            landings: tuple[int, ...] = ()
        elif isinstance(landing, list):
            landings = tuple(landing)
        else:
            landings = (landing,)
        rallies.append(
            RallyRecord(
                rally_id=r["rally_id"],
                hits=tuple(hits),
                net_hits=tuple(r.get("net_hits", ())),
                landings=landings,
                winner_side=r.get("winner_side"),
                extras=_extras(r, {"rally_id", "hits", "net_hits", "landing", "winner_side"}),
            )
        )
    return MatchRecord(
        match_id=doc["match_id"],
        discipline=doc["discipline"],
        fps=doc["fps"],
        total_frames=doc["total_frames"],
        segments=segments,
        rallies=tuple(rallies),
        extras=_extras(
            doc, {"match_id", "discipline", "fps", "total_frames", "segments", "rallies"}
        ),
    )


def parse_match(document: str | bytes) -> MatchRecord:
    try:
        doc = json.loads(document)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedDocument(str(exc)) from exc
    return match_from_dict(doc)


def match_to_dict(m: MatchRecord) -> dict:
    rallies = []
    for r in m.rallies:
        hits = []
        for h in r.hits:
            shot: dict[str, Any] = {"shot_type": h.shot.shot_type, "caption": h.shot.caption}
            if h.shot.semantic_target is not None:
                shot["semantic_target"] = list(h.shot.semantic_target)
            shot.update(h.shot.extras)
            hits.append({"frame": h.frame, "player_slot": h.player_slot, "shot": shot, **h.extras})
        if not r.landings:
            landing: Any = None
        elif len(r.landings) == 1:
            landing = r.landings[0]
        else:
            landing = list(r.landings)
        rally = {
            "rally_id": r.rally_id,
            "hits": hits,
            "net_hits": list(r.net_hits),
            "landing": landing,
        }
        if r.winner_side is not None:
            rally["winner_side"] = r.winner_side
        rally.update(r.extras)
        rallies.append(rally)
    return {
        "match_id": m.match_id,
        "discipline": m.discipline,
        "fps": m.fps,
        "total_frames": m.total_frames,
        "segments": [
            {"kind": s.kind, "start_frame": s.start_frame, "end_frame": s.end_frame, **s.extras}
            for s in m.segments
        ],
        "rallies": rallies,
        **m.extras,
    }


def serialize_match(m: MatchRecord, indent: int | None = None) -> str:
    return json.dumps(match_to_dict(m), indent=indent, ensure_ascii=False)


def load_match(path) -> MatchRecord:
    with open(path, "rb") as fh:
        return parse_match(fh.read())
