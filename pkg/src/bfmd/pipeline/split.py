from __future__ import annotations

import math
import random
from typing import Sequence, TypeVar

from bfmd.errors import InvalidRatios

T = TypeVar("T")


def _allocate(n: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of n items."""
    raw = [r * n for r in ratios]
    counts = [math.floor(x + 1e-9) for x in raw]
    order = sorted(range(len(ratios)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def split_dataset(
    samples: Sequence[T], ratios: Sequence[float] = (0.7, 0.2, 0.1), seed: int = 0
) -> tuple[list[T], list[T], list[T]]:
    """Shuffle rallies with ``seed`` and deal them into train/val/test.

    Samples must expose ``rally_id``; all shots of a rally land in one split.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise InvalidRatios(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    rallies: dict[str, list[T]] = {}
    for s in samples:
        rallies.setdefault(s.rally_id, []).append(s)
    ids = list(rallies)
    random.Random(seed).shuffle(ids)
    n_train, n_val, _ = _allocate(len(ids), ratios)
    parts = (ids[:n_train], ids[n_train : n_train + n_val], ids[n_train + n_val :])
    return tuple([s for rid in part for s in rallies[rid]] for part in parts)  # type: ignore[return-value]
