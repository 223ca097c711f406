"""Dataset and caption statistics over collections of matches."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, fields
from functools import lru_cache
from importlib import resources
from typing import Iterable

from bfmd.annotations.schema import PLAYER_TOKEN, MatchRecord
from bfmd.errors import EmptyCollection

COLUMNS = ("all", "singles", "doubles")


@dataclass(frozen=True)
class Counts:
    matches: int = 0
    seconds: float = 0.0
    rallies: int = 0
    replays: int = 0
    hawkeye: int = 0
    hits: int = 0
    net_hits: int = 0
    landings: int = 0

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))

    @property
    def duration_hours(self) -> float:
        return self.seconds / 3600.0

    @property
    def avg_hits_per_rally(self) -> float:
        return self.hits / self.rallies if self.rallies else 0.0

    def to_dict(self) -> dict:
        return {
            "matches": self.matches,
            "duration_hours": round(self.duration_hours, 2),
            "rallies": self.rallies,
            "replays": self.replays,
            "hawkeye": self.hawkeye,
            "hits": self.hits,
            "net_hits": self.net_hits,
            "landings": self.landings,
            "avg_hits_per_rally": round(self.avg_hits_per_rally, 2),
        }


@dataclass(frozen=True)
class StatsReport:
    singles: Counts
    doubles: Counts

    @property
    def all(self) -> Counts:
        return self.singles + self.doubles

    def column(self, name: str) -> Counts:
        return getattr(self, name)

    def __add__(self, other: "StatsReport") -> "StatsReport":
        return StatsReport(self.singles + other.singles, self.doubles + other.doubles)

    def to_dict(self) -> dict:
        return {c: self.column(c).to_dict() for c in COLUMNS}

    def to_table(self) -> str:
        rows = [
            ("Matches", "matches", "{:,}"),
            ("Total duration (hours)", "duration_hours", "{:.2f}"),
            ("Rallies", "rallies", "{:,}"),
            ("Replays", "replays", "{:,}"),
            ("Hawk-Eye challenges", "hawkeye", "{:,}"),
            ("Hits", "hits", "{:,}"),
            ("Net hits", "net_hits", "{:,}"),
            ("Shuttle landings", "landings", "{:,}"),
            ("Avg. hits per rally", "avg_hits_per_rally", "{:.2f}"),
        ]
        table = [("Category", "All", "Singles", "Doubles")]
        for label, attr, fmt in rows:
            table.append((label, *(fmt.format(getattr(self.column(c), attr)) for c in COLUMNS)))
        w0 = max(len(r[0]) for r in table)
        wn = max(len(x) for r in table for x in r[1:])
        lines = [f"{r[0]:<{w0}}  " + "  ".join(f"{x:>{wn}}" for x in r[1:]) for r in table]
        lines.insert(1, "-" * len(lines[0]))
        lines.insert(len(lines) - 1, "-" * len(lines[0]))
        return "\n".join(lines)


def match_counts(m: MatchRecord) -> Counts:
    kinds = Counter(s.kind for s in m.segments)
    return Counts(
        matches=1,
        seconds=m.total_frames / m.fps,
        rallies=len(m.rallies),
        replays=kinds["replay"],
        hawkeye=kinds["hawkeye"],
        hits=sum(len(r.hits) for r in m.rallies),
        net_hits=sum(len(r.net_hits) for r in m.rallies),
        landings=sum(len(r.landings) for r in m.rallies),
    )


def dataset_stats(matches: Iterable[MatchRecord]) -> StatsReport:
    singles, doubles = Counts(), Counts()
    n = 0
    for m in matches:
        n += 1
        if m.discipline == "singles":
            singles = singles + match_counts(m)
        else:
            doubles = doubles + match_counts(m)
    if n == 0:
        raise EmptyCollection("dataset_stats needs at least one match")
    return StatsReport(singles, doubles)


@lru_cache(maxsize=1)
def default_stopwords() -> frozenset[str]:
    text = resources.files("bfmd.resources").joinpath("stopwords.txt").read_text(encoding="utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip())


_EDGE_PUNCT = re.compile(r"^[^\w\[]+|[^\w\]]+$")


def caption_words(caption: str) -> list[str]:
    """Whitespace words, lowercased with edge punctuation stripped; [PLAYER] kept intact."""
    words = []
    for raw in caption.split():
        if raw.startswith(PLAYER_TOKEN):
            words.append(PLAYER_TOKEN)
            continue
        w = _EDGE_PUNCT.sub("", raw.lower())
        if w:
            words.append(w)
    return words


@dataclass(frozen=True)
class CaptionStats:
    length_histogram: dict[int, int]
    top_words: list[tuple[str, int]]

    def to_dict(self) -> dict:
        return {
            "length_histogram": {str(k): v for k, v in sorted(self.length_histogram.items())},
            "top_words": [[w, c] for w, c in self.top_words],
        }


def caption_stats(
    matches: Iterable[MatchRecord], top_k: int = 30, stopwords: frozenset[str] | None = None
) -> CaptionStats:
    stop = default_stopwords() if stopwords is None else stopwords
    lengths: Counter[int] = Counter()
    words: Counter[str] = Counter()
    seen = False
    for m in matches:
        for r in m.rallies:
            for h in r.hits:
                seen = True
                lengths[len(h.shot.caption.split())] += 1
                words.update(w for w in caption_words(h.shot.caption) if w not in stop)
    if not seen:
        raise EmptyCollection("no captions to summarize")
    ranked = sorted(words.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]
    return CaptionStats(dict(lengths), ranked)
