import copy
import json

import pytest


@pytest.fixture
def minimal_doc():
    return {
        "match_id": "m1",
        "discipline": "singles",
        "fps": 25.0,
        "total_frames": 1000,
        "segments": [
            {"kind": "rally", "start_frame": 100, "end_frame": 300},
            {"kind": "replay", "start_frame": 310, "end_frame": 400},
        ],
        "rallies": [
            {
                "rally_id": "m1-r0",
                "hits": [
                    {
                        "frame": 120,
                        "player_slot": "near",
                        "shot": {"shot_type": "serve", "caption": "[PLAYER] serves short to the forecourt."},
                    },
                    {
                        "frame": 150,
                        "player_slot": "far",
                        "shot": {
                            "shot_type": "smash",
                            "caption": "[PLAYER] jumps and fires a steep downward smash into the backcourt.",
                        },
                    },
                ],
                "net_hits": [],
                "landing": 180,
            }
        ],
    }


@pytest.fixture
def minimal_json(minimal_doc):
    return json.dumps(minimal_doc)


@pytest.fixture
def doc_factory(minimal_doc):
    def make(**changes):
        d = copy.deepcopy(minimal_doc)
        d.update(changes)
        return d

    return make
