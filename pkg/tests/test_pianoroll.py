import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pianogan.errors import DimensionError, FormatError, OverlapError
from pianogan.pianoroll import (
    DESK_RESOLUTION,
    FULL_RESOLUTION,
    Note,
    Pianoroll,
    Resolution,
    from_notes,
    load,
    load_any,
    save,
    save_real,
    to_notes,
    write_pgm,
)

ONE_TRACK = Resolution(steps_per_beat=4, beats_per_bar=4, bars=1, pitches=12, tracks=("Piano",))


def _row(roll, pitch=0, track=0):
    return set(np.flatnonzero(roll.timeline[:, pitch, track]).tolist())


def test_full_resolution_shape():
    assert FULL_RESOLUTION.shape == (4, 96, 84, 8)
    assert DESK_RESOLUTION.shape == (1, 24, 24, 2)


def test_single_note():
    roll = from_notes([Note(0, 0, 0, 4)], ONE_TRACK)
    assert roll.values.sum() == 4
    assert _row(roll) == {0, 1, 2, 3}


def test_pause_rule_same_pitch():
    roll = from_notes([Note(0, 0, 0, 4), Note(0, 0, 4, 4)], ONE_TRACK)
    assert _row(roll) == {0, 1, 2, 4, 5, 6, 7}


def test_pause_rule_other_pitch_untouched():
    roll = from_notes([Note(0, 0, 0, 4), Note(0, 1, 4, 4)], ONE_TRACK)
    assert _row(roll, 0) == {0, 1, 2, 3}
    assert _row(roll, 1) == {4, 5, 6, 7}


def test_overlap_rejected():
    with pytest.raises(OverlapError):
        from_notes([Note(0, 0, 0, 4), Note(0, 0, 2, 4)], ONE_TRACK)


def test_to_notes_run_lengths():
    values = np.zeros(ONE_TRACK.shape, np.uint8)
    values[0, [0, 1, 2, 5, 6], 3, 0] = 1
    notes = to_notes(Pianoroll(ONE_TRACK, values))
    assert [(n.onset, n.duration) for n in notes] == [(0, 3), (5, 2)]
    assert to_notes(Pianoroll(ONE_TRACK, np.zeros(ONE_TRACK.shape, np.uint8))) == []


def test_notes_continue_across_bars():
    res = Resolution(steps_per_beat=2, beats_per_bar=2, bars=2, pitches=12, tracks=("Piano",))
    roll = from_notes([Note(0, 5, 2, 4)], res)
    assert to_notes(roll) == [Note(0, 5, 2, 4)]


def _random_roll(rng, res, density=0.3):
    return Pianoroll(res, (rng.random(res.shape) < density).astype(np.uint8))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_note_count_equals_onsets(seed):
    roll = _random_roll(np.random.default_rng(seed), DESK_RESOLUTION)
    t = roll.timeline.astype(int)
    padded = np.concatenate([np.zeros((1,) + t.shape[1:], int), t])
    assert len(to_notes(roll)) == int(np.sum(np.diff(padded, axis=0) == 1))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_from_notes_inverts_to_notes(seed):
    # any binary roll is pause-separated by construction of its runs
    roll = _random_roll(np.random.default_rng(seed), DESK_RESOLUTION)
    assert from_notes(to_notes(roll), DESK_RESOLUTION) == roll


def test_save_load_roundtrip(tmp_path, rng):
    for i in range(50):
        res = Resolution(steps_per_beat=int(rng.integers(1, 5)), beats_per_bar=int(rng.integers(1, 5)),
                         bars=int(rng.integers(1, 3)), pitches=int(rng.integers(1, 30)),
                         tracks=tuple(f"t{j}" for j in range(int(rng.integers(1, 4)))))
        roll = _random_roll(rng, res, rng.random())
        path = tmp_path / f"{i}.bpr"
        save(roll, path)
        assert load(path, tracks=res.tracks) == roll


def test_real_variant_roundtrip(tmp_path, rng):
    values = rng.random(DESK_RESOLUTION.shape)
    save_real(values, DESK_RESOLUTION, tmp_path / "r.bpr")
    back, res, binary = load_any(tmp_path / "r.bpr", DESK_RESOLUTION.tracks, "C3")
    assert not binary and res == DESK_RESOLUTION
    np.testing.assert_array_equal(back, values)
    with pytest.raises(FormatError):
        load(tmp_path / "r.bpr")


def test_empty_file(tmp_path):
    (tmp_path / "e.bpr").write_bytes(b"")
    with pytest.raises(FormatError):
        load(tmp_path / "e.bpr")


def test_header_only_is_truncated(tmp_path):
    (tmp_path / "h.bpr").write_bytes(struct.pack("<4s5I", b"BPR1", 1, 4, 12, 1, 4))
    with pytest.raises(FormatError, match="truncated"):
        load(tmp_path / "h.bpr")


def test_bad_magic_and_overflow(tmp_path):
    (tmp_path / "m.bpr").write_bytes(b"XXXX" + bytes(40))
    with pytest.raises(FormatError):
        load(tmp_path / "m.bpr")
    (tmp_path / "o.bpr").write_bytes(struct.pack("<4s5I", b"BPR1", 2**20, 2**10, 128, 2**10, 1))
    with pytest.raises(FormatError, match="overflow"):
        load(tmp_path / "o.bpr")


def test_trailing_bytes(tmp_path, rng):
    roll = _random_roll(rng, ONE_TRACK)
    save(roll, tmp_path / "t.bpr")
    (tmp_path / "t.bpr").write_bytes((tmp_path / "t.bpr").read_bytes() + b"\0")
    with pytest.raises(FormatError):
        load(tmp_path / "t.bpr")


def test_roll_validation():
    with pytest.raises(DimensionError):
        Pianoroll(ONE_TRACK, np.zeros((1, 2, 3, 4)))
    with pytest.raises(ValueError):
        Pianoroll(ONE_TRACK, np.full(ONE_TRACK.shape, 2.0))


def test_track_lookup():
    assert FULL_RESOLUTION.track_index("guitar") == 2
    with pytest.raises(KeyError):
        FULL_RESOLUTION.track_index("Banjo")


def test_pgm_dimensions(tmp_path, rng):
    write_pgm(rng.random(DESK_RESOLUTION.shape), tmp_path / "x.pgm")
    header = (tmp_path / "x.pgm").read_bytes().split(b"\n")[:3]
    assert header == [b"P5", b"24 48", b"255"]
