import dataclasses
import string

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bfmd.annotations import caption_stats, validate_match
from bfmd.errors import DegenerateBox, InvalidRatios, MalformedDocument, ModalityGap
from bfmd.model import collate, desk_config
from bfmd.pipeline import (
    BOS,
    EOS,
    UNK,
    FileClipRef,
    ModalityTrack,
    Vocabulary,
    build_sample,
    clip_window,
    load_sidecar,
    position_from_bbox,
    read_clip,
    save_sidecar,
    split_dataset,
    synth_generate,
    write_clip,
)
from bfmd.pipeline.clipio import decode_clip, encode_clip
from bfmd.pipeline.synth import GROUND_Y
from bfmd.pipeline.vocab import normalize_text


# -- windows ------------------------------------------------------------


def test_clip_window_examples():
    assert clip_window(100, 0, 1000) == list(range(97, 113))
    assert clip_window(1, 0, 100) == [0, 0, 0, 1] + list(range(2, 14))
    w = clip_window(50, 0, 50)
    assert w[-12:] == [50] * 12 and len(w) == 16


@given(st.integers(0, 500), st.integers(0, 400), st.integers(0, 400))
def test_clip_window_invariants(hit, a, b):
    lo, hi = min(a, b), max(a, b)
    hit = min(max(hit, lo), hi)
    w = clip_window(hit, lo, hi)
    assert len(w) == 16
    assert all(x <= y for x, y in zip(w, w[1:]))
    assert all(lo <= x <= hi for x in w)


# -- positions ----------------------------------------------------------


@pytest.mark.parametrize(
    "box, pos", [((10, 20, 30, 60), (20, 60)), ((5, 5, 5, 5), (5, 5)), ((0, 0, 224, 224), (112, 224))]
)
def test_position_from_bbox(box, pos):
    assert position_from_bbox(box) == pos


def test_degenerate_box():
    with pytest.raises(DegenerateBox):
        position_from_bbox((30, 0, 10, 5))


# -- vocabulary ---------------------------------------------------------


def test_tokenize_example():
    v = Vocabulary.build(["[PLAYER] hits a smash."])
    ids = v.tokenize("[PLAYER] hits a smash.")
    assert v.words(ids) == ["[PLAYER]", "hits", "a", "smash", "."]
    assert ids[0] == BOS and ids[-1] == EOS and len(ids) == 7
    assert v.tokenize("") == [BOS, EOS]
    oov = v.tokenize("[PLAYER] lobs")
    assert oov[2] == UNK and v.detokenize(oov) == "[PLAYER] <unk>"


def test_vocab_reserved_ids_and_json():
    v = Vocabulary.build(["A b, c", "b c"])
    assert v.itos[:4] == ["<pad>", "<bos>", "<eos>", "<unk>"]
    assert Vocabulary.from_json(v.to_json()) == v
    assert len(set(v.itos)) == len(v.itos)


def test_truncation_keeps_eos():
    v = Vocabulary.build(["a"])
    ids = v.tokenize(" ".join(["a"] * 200), max_len=120)
    assert len(ids) == 120 and ids[-1] == EOS


printable = st.text(alphabet=string.printable, max_size=60)


@given(printable)
@settings(max_examples=200)
def test_round_trip_preserves_normalized_text(text):
    v = Vocabulary.build([text])
    back = v.detokenize(v.tokenize(text))
    squash = lambda s: "".join(normalize_text(s).split())
    assert squash(back) == squash(text)


# -- modality sidecars and samples --------------------------------------


@pytest.fixture(scope="module")
def corpus():
    return synth_generate(seed=11, n=12)


def _first(corpus):
    m = corpus.matches[0]
    r = m.rallies[0]
    return m, r, r.hits[0], corpus.tracks[r.rally_id]


def test_sidecar_round_trip(corpus, tmp_path):
    _, r, _, track = _first(corpus)
    path = tmp_path / f"{r.rally_id}.json"
    save_sidecar(track, path)
    back = load_sidecar(path)
    assert back.frames == track.frames
    assert np.array_equal(back.shuttle_present, track.shuttle_present)
    assert np.allclose(back.bbox, track.bbox, atol=1e-3, equal_nan=True)
    assert np.allclose(back.pose, track.pose, atol=1e-3, equal_nan=True)


def test_position_follows_bbox(corpus):
    _, _, _, track = _first(corpus)
    b = track.bbox
    assert np.array_equal(track.position[..., 0], (b[..., 0] + b[..., 2]) / 2)
    assert np.array_equal(track.position[..., 1], b[..., 3])


def test_sample_from_full_fixture(corpus):
    s = corpus.samples[0]
    assert len(s.frame_window) == 16 and len(s.semantic_target) == 22
    assert s.caption_tokens[0] == BOS and s.caption_tokens[-1] == EOS
    assert s.clip.load().shape == (16, 224, 224, 3)


def _with_missing(track, frames, players=False, shuttle=False):
    present = track.player_present.copy()
    sh_ok = track.shuttle_present.copy()
    rows = [track.frames.index(f) for f in frames]
    if players:
        present[rows, 0] = False
    if shuttle:
        sh_ok[rows] = False
    bbox = track.bbox.copy()
    bbox[~present] = np.nan
    sh = track.shuttle.copy()
    sh[~sh_ok] = np.nan
    return dataclasses.replace(track, bbox=bbox, player_present=present, shuttle=sh, shuttle_present=sh_ok)


def test_missing_shuttle_is_flagged(corpus):
    m, r, hit, track = _first(corpus)
    drop = list(range(hit.frame, hit.frame + 4))
    s = build_sample(m, r, hit, _with_missing(track, drop, shuttle=True), corpus.vocab, corpus.samples[0].clip)
    assert (~s.modalities.shuttle_present).sum() >= 4
    batch = collate([s], desk_config(len(corpus.vocab)))
    mask = batch.inputs.mod_mask[0]
    T = 16
    assert mask[2 * T :].sum() == (~s.modalities.shuttle_present).sum()
    assert not mask[: 2 * T].any()
    assert batch.inputs.shuttle[0][~mask[2 * T :]].abs().sum() > 0
    assert (batch.inputs.shuttle[0][mask[2 * T :]] == 0).all()


def test_missing_boxes_raise_modality_gap(corpus):
    m, r, hit, track = _first(corpus)
    window = clip_window(hit.frame, hit.frame - 100, hit.frame + 100)
    gap = _with_missing(track, window[:10], players=True)
    with pytest.raises(ModalityGap):
        build_sample(m, r, hit, gap, corpus.vocab, corpus.samples[0].clip)
    ok = _with_missing(track, window[:8], players=True)
    build_sample(m, r, hit, ok, corpus.vocab, corpus.samples[0].clip)


# -- clip container -----------------------------------------------------


def test_clip_container_round_trip(tmp_path):
    clip = np.random.default_rng(0).integers(0, 256, (16, 8, 6, 3), dtype=np.uint8)
    data = encode_clip(clip)
    assert data[:8] == b"BFMDCLIP"
    assert np.array_equal(decode_clip(data), clip)
    p = tmp_path / "a.clip"
    write_clip(p, clip)
    assert np.array_equal(read_clip(p), clip)
    assert np.array_equal(FileClipRef(p).load(), clip)
    with pytest.raises(MalformedDocument):
        decode_clip(data[:-1])
    with pytest.raises(MalformedDocument):
        decode_clip(b"NOTACLIP" + data[8:])


# -- synthetic corpus ---------------------------------------------------


def test_synth_is_deterministic():
    a, b = synth_generate(seed=7, n=2), synth_generate(seed=7, n=2)
    assert [s.caption for s in a.samples] == [s.caption for s in b.samples]
    assert a.vocab == b.vocab
    for x, y in zip(a.samples, b.samples):
        assert np.array_equal(x.modalities.bbox, y.modalities.bbox)
        assert np.array_equal(x.clip.load(), y.clip.load())
    assert [s.caption for s in synth_generate(seed=8, n=2).samples] != [s.caption for s in a.samples]


def test_synth_passes_validation_and_sample_invariants():
    c = synth_generate(seed=4, n=60)
    assert len(c.samples) == 60
    for m in c.matches:
        errs = [v for v in validate_match(m) if v.severity == "error"]
        assert errs == []
    for s in c.samples:
        assert len(s.frame_window) == 16 and len(s.caption_tokens) <= 120


def test_smash_shuttle_descends_after_hit():
    c = synth_generate(seed=2, n=200, missing_shuttle_rate=0.0)
    smashes = [s for s in c.samples if s.shot_type == "smash"]
    assert smashes
    for s in smashes:
        y = s.modalities.shuttle[3:, 1]  # hit frame onward
        assert np.all(np.diff(y) > 0)
        assert y.max() <= GROUND_Y


def test_clear_rises_first():
    c = synth_generate(seed=2, n=200, missing_shuttle_rate=0.0)
    clears = [s for s in c.samples if s.shot_type == "clear"]
    for s in clears:
        y = s.modalities.shuttle[3:, 1]
        assert y[1] < y[0]


def test_captions_agree_with_semantic_target():
    c = synth_generate(seed=5, n=100)
    for s in c.samples:
        assert sum(s.semantic_target[:12]) == 1
        assert sum(s.semantic_target[12:16]) == 1
        assert sum(s.semantic_target[16:19]) == 1


def expected_caption_words() -> float:
    """Mean whitespace word count of the template grammar with uniform choices.

    [PLAYER] (1) + movement phrase + verb phrase (3) + trajectory + shot + region + intent.
    Movement: forward 2, back (2 + 1) / 2, still 2, so 11/6 on average.
    Per shot type (trajectory, shot name, expected region phrase, intent):
    """
    traj = {"high": 1.5, "steep": 1.5, "flat": 1.5, "soft": 1.0}
    region = {"fore": 3.0, "mid": 3.0, "back": 3.5}
    intent = {"attack": 3.0, "defend": 3.0, "pressure": 4.0, None: 0.0}
    table = [
        ("soft", 1, ["fore"], None),  # serve
        ("high", 2, ["back"], None),  # long serve
        ("steep", 1, ["mid", "back"], "attack"),  # smash
        ("high", 1, ["back"], "defend"),  # clear
        ("soft", 1, ["fore"], "pressure"),  # drop
        ("flat", 1, ["mid"], "pressure"),  # push
        ("soft", 2, ["fore"], "pressure"),  # net shot
        ("steep", 2, ["fore", "mid"], "attack"),  # net kill
        ("high", 1, ["back"], "defend"),  # lift
        ("flat", 1, ["mid", "back"], "attack"),  # drive
        ("soft", 1, ["fore"], "defend"),  # block
        ("steep", 1, ["fore", "mid"], "pressure"),  # press
    ]
    per_shot = [
        traj[t] + n + sum(region[r] for r in rs) / len(rs) + intent[i] for t, n, rs, i in table
    ]
    return 1 + 11 / 6 + 3 + sum(per_shot) / len(per_shot)


def test_caption_length_matches_grammar_expectation():
    assert expected_caption_words() == pytest.approx(14.41667, abs=1e-4)
    c = synth_generate(seed=9, n=320)
    hist = caption_stats(c.matches).length_histogram
    mean = sum(k * v for k, v in hist.items()) / sum(hist.values())
    assert abs(mean - expected_caption_words()) <= 1.0


# -- split --------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class _S:
    rally_id: str
    i: int


def test_split_ten_rallies():
    samples = [_S(f"r{k}", j) for k in range(10) for j in range(k % 3 + 1)]
    tr, va, te = split_dataset(samples, seed=3)
    assert [len({s.rally_id for s in part}) for part in (tr, va, te)] == [7, 2, 1]
    assert sorted(tr + va + te, key=lambda s: (s.rally_id, s.i)) == sorted(samples, key=lambda s: (s.rally_id, s.i))
    rallies = [{s.rally_id for s in p} for p in (tr, va, te)]
    assert not (rallies[0] & rallies[1] or rallies[0] & rallies[2] or rallies[1] & rallies[2])
    assert split_dataset(samples, seed=3) == (tr, va, te)


def test_split_all_train_and_bad_ratios():
    samples = [_S(f"r{k}", 0) for k in range(5)]
    tr, va, te = split_dataset(samples, ratios=(1, 0, 0))
    assert len(tr) == 5 and not va and not te
    with pytest.raises(InvalidRatios):
        split_dataset(samples, ratios=(0.5, 0.2, 0.2))


@given(st.lists(st.integers(0, 30), min_size=1, max_size=80), st.integers(0, 100))
def test_split_partitions(rally_ids, seed):
    samples = [_S(f"r{r}", i) for i, r in enumerate(rally_ids)]
    parts = split_dataset(samples, seed=seed)
    ids = [s.i for p in parts for s in p]
    assert sorted(ids) == list(range(len(samples)))
