"""Per-frame pitch vectors ("piano roll vectors") for monophonic melodies.

Kept as a comparison baseline: the encoding cannot tell one long note from
repeated shorter notes of the same pitch, and encodes rests as pitch 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .notes import NoteSequence, is_monophonic

_CEIL_EPS = 1e-9


class NotMonophonic(ValueError):
    pass


@dataclass(frozen=True)
class PitchFrameVector:
    frames: tuple[int, ...]
    col_fs: int

    def to_line(self) -> str:
        return ",".join(str(f) for f in self.frames)

    @classmethod
    def from_line(cls, line: str, col_fs: int) -> "PitchFrameVector":
        line = line.strip()
        return cls(tuple(int(x) for x in line.split(",")) if line else (), col_fs)


def encode_pianoroll(seq: NoteSequence, col_fs: int = 8) -> PitchFrameVector:
    """Sample the sounding pitch at each frame's center.

    There are ``ceil(end_time * col_fs)`` frames. Frame ``f`` is sampled at
    ``(f + 0.5) / col_fs``; a final partial frame is sampled at the middle of
    the part it covers, so a trailing fraction of a frame never reads as rest.
    """
    if col_fs < 1:
        raise ValueError(f"col_fs must be >= 1, got {col_fs}")
    if not is_monophonic(seq):
        raise NotMonophonic("piano roll vectors need a monophonic sequence")
    if not seq.notes:
        return PitchFrameVector((), col_fs)
    end = seq.end_time
    n = max(math.ceil(end * col_fs - _CEIL_EPS), 1)
    t = (np.arange(n) + 0.5) / col_fs
    last_start = (n - 1) / col_fs
    t[-1] = min(t[-1], (last_start + end) / 2)

    onsets = np.array([x.onset for x in seq.notes])
    offsets = np.array([x.offset for x in seq.notes])
    pitches = np.array([x.pitch for x in seq.notes])
    # latest note starting at or before t; it sounds iff t < its offset
    i = np.searchsorted(onsets, t, side="right") - 1
    valid = i >= 0
    ii = np.where(valid, i, 0)
    sounding = valid & (t < offsets[ii])
    frames = np.where(sounding, pitches[ii], 0)
    return PitchFrameVector(tuple(int(f) for f in frames), col_fs)


def contains_rest(v: PitchFrameVector) -> bool:
    return any(f == 0 for f in v.frames)
