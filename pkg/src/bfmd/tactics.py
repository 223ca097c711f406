"""Tactical categories, pattern detection and smoothed intensity curves."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

from bfmd.annotations.schema import SHOT_TYPES, MatchRecord, RallyRecord
from bfmd.errors import InvalidParameter

CATEGORIES = ("attack", "control", "defense")
DEFAULT_BIN_WIDTH = 30.0
DEFAULT_SIGMA = 60.0
SMOOTHING_METHOD = "gaussian-unit-mass, symmetric boundary reflection"


@dataclass(frozen=True)
class TacticMapping:
    table: dict[str, str]

    def __post_init__(self):
        missing = [s for s in SHOT_TYPES if s not in self.table]
        if missing:
            raise InvalidParameter(f"tactic mapping is missing shot types: {missing}")

    def __getitem__(self, shot_type: str) -> str:
        return self.table[shot_type]


@dataclass(frozen=True)
class TacticPattern:
    pattern_id: str
    sequence: tuple[str, ...]

    def __post_init__(self):
        if not 2 <= len(self.sequence) <= 8:
            raise InvalidParameter(f"pattern {self.pattern_id!r} length must be in [2, 8]")


@dataclass(frozen=True, order=True)
class Occurrence:
    start_index: int
    pattern_id: str


@dataclass(frozen=True)
class IntensityCurve:
    pattern_id: str
    times: np.ndarray
    values: np.ndarray
    bin_width: float
    meta: dict = field(default_factory=dict)

    def mass(self) -> float:
        return float(self.values.sum() * self.bin_width)


def load_tactics(path=None) -> tuple[TacticMapping, list[TacticPattern]]:
    if path is None:
        text = resources.files("bfmd.resources").joinpath("tactics.json").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    d = json.loads(text)
    mapping = TacticMapping(dict(d["mapping"]))
    patterns = [TacticPattern(p["pattern_id"], tuple(p["sequence"])) for p in d["patterns"]]
    return mapping, patterns


def categorize_rally(r: RallyRecord, m: TacticMapping) -> list[str]:
    return [m[h.shot.shot_type] for h in r.hits]


def detect_patterns(seq: Sequence, patterns: Iterable[TacticPattern]) -> list[Occurrence]:
    seq = list(seq)
    found = []
    for p in patterns:
        n = len(p.sequence)
        target = list(p.sequence)
        for i in range(len(seq) - n + 1):
            if seq[i : i + n] == target:
                found.append(Occurrence(i, p.pattern_id))
    return sorted(found)


def _reflect_index(idx: np.ndarray, n: int) -> np.ndarray:
    """Half-sample symmetric extension (... b a | a b c | c b ...), any distance."""
    period = 2 * n
    m = np.mod(idx, period)
    return np.where(m < n, m, period - 1 - m)


def gaussian_smooth(x: np.ndarray, sigma_bins: float) -> np.ndarray:
    if sigma_bins <= 0:
        return x.copy()
    radius = max(1, int(math.ceil(4.0 * sigma_bins)))
    offsets = np.arange(-radius, radius + 1)
    with np.errstate(over="ignore"):
        kernel = np.exp(-0.5 * (offsets / sigma_bins) ** 2)
    kernel /= kernel.sum()
    n = len(x)
    idx = _reflect_index(np.arange(n)[:, None] + offsets[None, :], n)
    return (x[idx] * kernel[None, :]).sum(axis=1)


def intensity_curves(
    occurrences: Iterable[tuple[str, float]],
    match_duration: float,
    bin_width: float = DEFAULT_BIN_WIDTH,
    kernel_sigma: float = DEFAULT_SIGMA,
    pattern_ids: Sequence[str] | None = None,
) -> list[IntensityCurve]:
    """Bin (pattern_id, seconds) occurrences and smooth each pattern's density.

    Values are occurrences per second, so ``sum(values) * bin_width`` equals
    the raw occurrence count.
    """
    if not bin_width > 0:
        raise InvalidParameter("bin_width must be positive")
    if kernel_sigma < 0:
        raise InvalidParameter("kernel_sigma must be non-negative")
    occ = list(occurrences)
    ids = list(pattern_ids) if pattern_ids is not None else sorted({p for p, _ in occ})
    n_bins = max(1, int(math.ceil(match_duration / bin_width)))
    times = (np.arange(n_bins) + 0.5) * bin_width
    curves = []
    for pid in ids:
        hist = np.zeros(n_bins)
        for p, t in occ:
            if p == pid:
                hist[min(max(int(t // bin_width), 0), n_bins - 1)] += 1.0
        values = gaussian_smooth(hist / bin_width, kernel_sigma / bin_width)
        curves.append(
            IntensityCurve(
                pid,
                times,
                values,
                bin_width,
                meta={"smoothing": SMOOTHING_METHOD, "kernel_sigma": kernel_sigma, "bin_width": bin_width},
            )
        )
    return curves


def match_occurrences(
    match: MatchRecord, mapping: TacticMapping, patterns: Sequence[TacticPattern]
) -> list[tuple[str, float]]:
    """All pattern occurrences of a match, timestamped at their first hit (seconds)."""
    out = []
    for rally in match.rallies:
        seq = categorize_rally(rally, mapping)
        for o in detect_patterns(seq, patterns):
            out.append((o.pattern_id, rally.hits[o.start_index].frame / match.fps))
    return out


def match_curves(
    match: MatchRecord,
    mapping: TacticMapping,
    patterns: Sequence[TacticPattern],
    bin_width: float = DEFAULT_BIN_WIDTH,
    kernel_sigma: float = DEFAULT_SIGMA,
) -> list[IntensityCurve]:
    return intensity_curves(
        match_occurrences(match, mapping, patterns),
        match.duration_seconds,
        bin_width,
        kernel_sigma,
        pattern_ids=[p.pattern_id for p in patterns],
    )


def write_curves_csv(curves: Sequence[IntensityCurve], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["pattern_id", "t_seconds", "intensity"])
        for c in curves:
            for t, v in zip(c.times, c.values):
                w.writerow([c.pattern_id, f"{t:.3f}", f"{v:.9g}"])


def plot_curves(curves: Sequence[IntensityCurve], path, title: str = "") -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 3))
    for c in curves:
        ax.plot(c.times / 60.0, c.values * 60.0, label=c.pattern_id)
    ax.set_xlabel("match time (min)")
    ax.set_ylabel("occurrences / min")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=7, loc="upper right")
    fig.tight_layout()
    # Pin metadata so repeated runs write identical files.
    fig.savefig(path, metadata={"Date": None} if str(path).endswith(".svg") else None)
    plt.close(fig)
