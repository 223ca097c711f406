from bfmd.annotations.schema import (
    DISCIPLINES,
    PLAYER_SLOTS,
    PLAYER_TOKEN,
    SEGMENT_KINDS,
    SHOT_TYPES,
    HitEvent,
    MatchRecord,
    RallyRecord,
    Segment,
    ShotAnnotation,
    load_match,
    match_from_dict,
    match_to_dict,
    parse_match,
    serialize_match,
)
from bfmd.annotations.semantics import K, Lexicon, default_lexicon, derive_semantic_vector
from bfmd.annotations.stats import CaptionStats, StatsReport, caption_stats, dataset_stats
from bfmd.annotations.validate import Violation, has_errors, validate_match

__all__ = [
    "DISCIPLINES",
    "PLAYER_SLOTS",
    "PLAYER_TOKEN",
    "SEGMENT_KINDS",
    "SHOT_TYPES",
    "K",
    "CaptionStats",
    "HitEvent",
    "Lexicon",
    "MatchRecord",
    "RallyRecord",
    "Segment",
    "ShotAnnotation",
    "StatsReport",
    "Violation",
    "caption_stats",
    "dataset_stats",
    "default_lexicon",
    "derive_semantic_vector",
    "has_errors",
    "load_match",
    "match_from_dict",
    "match_to_dict",
    "parse_match",
    "serialize_match",
    "validate_match",
]
