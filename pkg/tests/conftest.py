import numpy as np
import pytest
from hypothesis import strategies as st

from melodyclf.notes import Note, NoteSequence


@st.composite
def monophonic_sequences(draw, min_dur=0.01, max_gap=3.0, max_notes=20, pitch_lo=21, pitch_hi=108):
    """Random non-overlapping melodies with durations >= ``min_dur``."""
    n = draw(st.integers(0, max_notes))
    t = draw(st.floats(0, 2.0))
    notes = []
    for _ in range(n):
        dur = draw(st.floats(min_dur, min_dur + 2.0))
        pitch = draw(st.integers(pitch_lo, pitch_hi))
        notes.append(Note(pitch, t, t + dur))
        t = t + dur + draw(st.floats(0, max_gap))
    return NoteSequence(tuple(notes))


def random_monophonic(rng: np.random.Generator, n_max=30, min_dur=0.01, pitch_lo=21, pitch_hi=108):
    n = int(rng.integers(1, n_max + 1))
    t = float(rng.uniform(0, 2))
    notes = []
    for _ in range(n):
        dur = float(min_dur + rng.exponential(0.3))
        notes.append(Note(int(rng.integers(pitch_lo, pitch_hi + 1)), t, t + dur))
        t += dur + (float(rng.exponential(0.4)) if rng.random() < 0.5 else 0.0)
    return NoteSequence(tuple(notes))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance verdicts, filled by test_acceptance.py and printed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
