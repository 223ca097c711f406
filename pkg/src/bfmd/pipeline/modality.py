"""Per-frame structural modalities: player boxes, court positions, poses, shuttle.

Sidecar JSON (one per rally)::

    {"rally_id": ..., "frames": [{"frame": 12,
                                  "players": {"near": {"bbox": [x1, y1, x2, y2], "pose": [[x, y], ...]},
                                              "far": {...}},
                                  "shuttle": [x, y] | null}, ...]}

Missing data is carried as boolean masks; nothing is zero-filled silently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from bfmd.annotations.schema import PLAYER_SLOTS
from bfmd.errors import DegenerateBox, SchemaViolation

N_KEYPOINTS = 17


def position_from_bbox(bbox) -> tuple[float, float]:
    """Court position of a player: the midpoint of the box's bottom edge."""
    x1, y1, x2, y2 = (float(v) for v in bbox)
    if x1 > x2 or y1 > y2:
        raise DegenerateBox(f"bbox {bbox} has x1 > x2 or y1 > y2")
    return ((x1 + x2) / 2.0, y2)


@dataclass(frozen=True)
class ModalityTrack:
    """Modalities for an ordered list of frames (repeats allowed).

    Arrays use slot order (near, far) on axis 1.  ``player_present[t, s]`` is
    False when slot ``s`` has no box at frame ``t``; the corresponding bbox,
    position and pose rows are NaN.
    """

    frames: tuple[int, ...]
    bbox: np.ndarray  # (T, 2, 4)
    pose: np.ndarray  # (T, 2, K_p, 2)
    player_present: np.ndarray  # (T, 2) bool
    shuttle: np.ndarray  # (T, 2)
    shuttle_present: np.ndarray  # (T,) bool
    rally_id: str = ""

    def __post_init__(self):
        ok = self.player_present
        b = self.bbox[ok]
        if len(b) and ((b[:, 0] > b[:, 2]).any() or (b[:, 1] > b[:, 3]).any()):
            raise DegenerateBox("bbox with x1 > x2 or y1 > y2")

    @property
    def n_keypoints(self) -> int:
        return self.pose.shape[2]

    @property
    def position(self) -> np.ndarray:
        """(T, 2, 2) bottom-centre positions, NaN where the box is missing."""
        b = self.bbox
        return np.stack([(b[..., 0] + b[..., 2]) / 2.0, b[..., 3]], axis=-1)

    def window(self, frames: Sequence[int]) -> "ModalityTrack":
        index = {f: i for i, f in enumerate(self.frames)}
        rows = [index.get(f, -1) for f in frames]
        T = len(rows)
        kp = self.n_keypoints
        bbox = np.full((T, 2, 4), np.nan)
        pose = np.full((T, 2, kp, 2), np.nan)
        present = np.zeros((T, 2), dtype=bool)
        shuttle = np.full((T, 2), np.nan)
        shuttle_present = np.zeros(T, dtype=bool)
        for t, r in enumerate(rows):
            if r < 0:
                continue
            bbox[t], pose[t], present[t] = self.bbox[r], self.pose[r], self.player_present[r]
            shuttle[t], shuttle_present[t] = self.shuttle[r], self.shuttle_present[r]
        return ModalityTrack(tuple(frames), bbox, pose, present, shuttle, shuttle_present, self.rally_id)

    @classmethod
    def from_dict(cls, doc: dict, n_keypoints: int = N_KEYPOINTS) -> "ModalityTrack":
        try:
            entries = sorted(doc["frames"], key=lambda e: e["frame"])
            T = len(entries)
            bbox = np.full((T, 2, 4), np.nan)
            pose = np.full((T, 2, n_keypoints, 2), np.nan)
            present = np.zeros((T, 2), dtype=bool)
            shuttle = np.full((T, 2), np.nan)
            shuttle_present = np.zeros(T, dtype=bool)
            for t, e in enumerate(entries):
                players = e.get("players") or {}
                for s, slot in enumerate(PLAYER_SLOTS):
                    p = players.get(slot)
                    if not p or p.get("bbox") is None:
                        continue
                    bbox[t, s] = p["bbox"]
                    present[t, s] = True
                    if p.get("pose") is not None:
                        pose[t, s] = np.asarray(p["pose"], dtype=float).reshape(n_keypoints, 2)
                if e.get("shuttle") is not None:
                    shuttle[t] = e["shuttle"]
                    shuttle_present[t] = True
            return cls(
                tuple(int(e["frame"]) for e in entries), bbox, pose, present, shuttle, shuttle_present,
                doc.get("rally_id", ""),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, DegenerateBox):
                raise
            raise SchemaViolation("/frames", f"bad modality sidecar: {exc}") from exc

    def to_dict(self) -> dict:
        frames = []
        for t, f in enumerate(self.frames):
            players = {}
            for s, slot in enumerate(PLAYER_SLOTS):
                if self.player_present[t, s]:
                    entry = {"bbox": [round(float(v), 3) for v in self.bbox[t, s]]}
                    if not np.isnan(self.pose[t, s]).any():
                        entry["pose"] = [[round(float(x), 3), round(float(y), 3)] for x, y in self.pose[t, s]]
                    players[slot] = entry
            shuttle = (
                [round(float(v), 3) for v in self.shuttle[t]] if self.shuttle_present[t] else None
            )
            frames.append({"frame": int(f), "players": players, "shuttle": shuttle})
        return {"rally_id": self.rally_id, "frames": frames}


def load_sidecar(path, n_keypoints: int = N_KEYPOINTS) -> ModalityTrack:
    with open(path, encoding="utf-8") as fh:
        return ModalityTrack.from_dict(json.load(fh), n_keypoints)


def save_sidecar(track: ModalityTrack, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(track.to_dict(), fh, separators=(",", ":"))
