import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import monophonic_sequences
from melodyclf.notes import Note, NoteSequence
from melodyclf.pianoroll import NotMonophonic, PitchFrameVector, contains_rest, encode_pianoroll


def seq(*tuples):
    return NoteSequence.from_tuples(tuples)


def test_quarter_note():
    assert encode_pianoroll(seq((60, 0.0, 0.5)), 8).frames == (60, 60, 60, 60)


def test_empty():
    assert encode_pianoroll(seq(), 8).frames == ()


def test_quarter_equals_two_eighths():
    quarter = encode_pianoroll(seq((60, 0.0, 0.5)), 8)
    eighths = encode_pianoroll(seq((60, 0.0, 0.25), (60, 0.25, 0.5)), 8)
    assert quarter.frames == eighths.frames == (60, 60, 60, 60)


def test_rest_frames_are_zero():
    v = encode_pianoroll(seq((60, 0.0, 0.25), (62, 0.5, 0.75)), 8)
    assert v.frames == (60, 60, 0, 0, 62, 62)


def test_partial_last_frame_samples_covered_part():
    # 0.51 s at 8 fps: the fifth frame covers only [0.5, 0.51)
    v = encode_pianoroll(seq((60, 0.0, 0.51)), 8)
    assert v.frames == (60,) * 5


def test_rejects_polyphony():
    with pytest.raises(NotMonophonic):
        encode_pianoroll(seq((60, 0, 1), (64, 0.5, 1.5)), 8)


def test_contains_rest():
    assert contains_rest(PitchFrameVector((60, 60, 0, 62), 8))
    assert not contains_rest(PitchFrameVector((60, 60), 8))
    assert not contains_rest(PitchFrameVector((), 8))


def test_line_format():
    v = PitchFrameVector((60, 0, 62), 8)
    assert v.to_line() == "60,0,62"
    assert PitchFrameVector.from_line("60,0,62\n", 8) == v


def split_note(s: NoteSequence, idx: int, frac: float) -> NoteSequence:
    n = s.notes[idx]
    cut = n.onset + frac * (n.offset - n.onset)
    if not n.onset < cut < n.offset:
        return s
    parts = (Note(n.pitch, n.onset, cut), Note(n.pitch, cut, n.offset))
    return NoteSequence(s.notes[:idx] + parts + s.notes[idx + 1 :])


@settings(max_examples=200, deadline=None)
@given(monophonic_sequences(min_dur=0.01), st.integers(0, 100), st.floats(0.01, 0.99), st.integers(1, 32))
def test_split_invariance(s, i, frac, col_fs):
    if not s.notes:
        return
    idx = i % len(s.notes)
    assert encode_pianoroll(split_note(s, idx, frac), col_fs) == encode_pianoroll(s, col_fs)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.01, 2.0), min_size=1, max_size=15), st.integers(1, 32))
def test_gapless_has_no_rest(durs, col_fs):
    t, notes = 0.0, []
    for k, d in enumerate(durs):
        notes.append(Note(60 + k % 12, t, t + d))
        t += d
    assert not contains_rest(encode_pianoroll(NoteSequence(tuple(notes)), col_fs))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.01, 2.0), min_size=2, max_size=15), st.integers(1, 32),
       st.integers(0, 100), st.floats(1.0001, 3.0))
def test_gap_of_one_frame_leaks_rest(durs, col_fs, where, gap_frames):
    gap_at = where % (len(durs) - 1)
    t, notes = 0.0, []
    for k, d in enumerate(durs):
        notes.append(Note(60, t, t + d))
        t += d
        if k == gap_at:
            t += gap_frames / col_fs
    assert contains_rest(encode_pianoroll(NoteSequence(tuple(notes)), col_fs))
