"""Semantic attribute vectors (K = 22) and their derivation from captions.

Bit layout: 12 shot categories, 4 trajectory/intensity attributes,
3 court regions, 3 tactical intents.  The category bit is the one-hot
shot type; every other bit is set when one of its lexicon keywords occurs
in the caption as a whole word (case-insensitive).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from bfmd.annotations.schema import SHOT_TYPES, ShotAnnotation

N_CATEGORIES = len(SHOT_TYPES)
GROUP_SIZES = {"category": 12, "trajectory": 4, "region": 3, "intent": 3}
K = sum(GROUP_SIZES.values())

_GROUP_OFFSETS = {"category": 0, "trajectory": 12, "region": 16, "intent": 19}


def group_slice(group: str) -> slice:
    start = _GROUP_OFFSETS[group]
    return slice(start, start + GROUP_SIZES[group])


@dataclass(frozen=True)
class LexiconEntry:
    name: str
    keywords: tuple[str, ...]

    def pattern(self) -> re.Pattern:
        alts = "|".join(re.escape(k.lower()) for k in sorted(self.keywords, key=len, reverse=True))
        return re.compile(rf"(?<![\w-])(?:{alts})(?![\w-])", re.IGNORECASE)


@dataclass(frozen=True)
class Lexicon:
    trajectory: tuple[LexiconEntry, ...]
    region: tuple[LexiconEntry, ...]
    intent: tuple[LexiconEntry, ...]

    def __post_init__(self):
        for group in ("trajectory", "region", "intent"):
            n = len(getattr(self, group))
            if n != GROUP_SIZES[group]:
                raise ValueError(f"lexicon group {group!r} needs {GROUP_SIZES[group]} entries, got {n}")

    @classmethod
    def from_dict(cls, d: dict) -> "Lexicon":
        return cls(
            **{
                group: tuple(LexiconEntry(e["name"], tuple(e["keywords"])) for e in d[group])
                for group in ("trajectory", "region", "intent")
            }
        )

    @classmethod
    def from_file(cls, path) -> "Lexicon":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def attribute_names(self) -> list[str]:
        return list(SHOT_TYPES) + [e.name for e in self.trajectory + self.region + self.intent]


@lru_cache(maxsize=1)
def default_lexicon() -> Lexicon:
    text = resources.files("bfmd.resources").joinpath("lexicon.json").read_text(encoding="utf-8")
    return Lexicon.from_dict(json.loads(text))


def derive_semantic_vector(shot: ShotAnnotation, lexicon: Lexicon | None = None) -> tuple[int, ...]:
    lexicon = lexicon or default_lexicon()
    bits = [0] * K
    bits[SHOT_TYPES.index(shot.shot_type)] = 1
    caption = shot.caption
    for i, entry in enumerate(lexicon.trajectory):
        if entry.pattern().search(caption):
            bits[12 + i] = 1
    for i, entry in enumerate(lexicon.intent):
        if entry.pattern().search(caption):
            bits[19 + i] = 1
    # Regions are exclusive: keep the last one mentioned (where the shot goes).
    last_pos, last_region = -1, None
    for i, entry in enumerate(lexicon.region):
        for m in entry.pattern().finditer(caption):
            if m.start() > last_pos:
                last_pos, last_region = m.start(), i
    if last_region is not None:
        bits[16 + last_region] = 1
    return tuple(bits)


def check_semantic_vector(bits) -> list[str]:
    """Return the broken invariants of a semantic vector (empty when valid)."""
    problems = []
    if len(bits) != K:
        return [f"expected {K} bits, got {len(bits)}"]
    if any(b not in (0, 1) for b in bits):
        problems.append("bits must be 0 or 1")
    if sum(bits[group_slice("category")]) != 1:
        problems.append("exactly one shot-category bit must be set")
    if sum(bits[group_slice("region")]) > 1:
        problems.append("at most one court-region bit may be set")
    return problems
