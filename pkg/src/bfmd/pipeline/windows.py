from __future__ import annotations

PRE_HIT = 3
POST_HIT = 12
WINDOW = PRE_HIT + 1 + POST_HIT


def clip_window(hit_frame: int, seg_start: int, seg_end: int, pre: int = PRE_HIT, post: int = POST_HIT) -> list[int]:
    """Frame indices [hit - pre, hit + post], clamped into [seg_start, seg_end].

    Out-of-segment positions repeat the boundary frame so the window length
    never changes.
    """
    return [min(max(f, seg_start), seg_end) for f in range(hit_frame - pre, hit_frame + post + 1)]
