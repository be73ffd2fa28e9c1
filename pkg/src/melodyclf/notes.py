"""Note-level data model shared by the parsers and codecs.

All times are seconds (float64). Codecs quantize at their own boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable


@dataclass(frozen=True, order=False)
class Note:
    pitch: int
    onset: float
    offset: float
    velocity: int = 64

    def __post_init__(self) -> None:
        if not 0 <= self.pitch <= 127:
            raise ValueError(f"pitch must be in [0, 127], got {self.pitch}")
        if not 0 <= self.velocity <= 127:
            raise ValueError(f"velocity must be in [0, 127], got {self.velocity}")
        if self.onset < 0:
            raise ValueError(f"onset must be >= 0, got {self.onset}")

    @property
    def duration(self) -> float:
        return self.offset - self.onset


@dataclass(frozen=True)
class NoteSequence:
    """Ordered notes plus an opaque label identifying where they came from."""

    notes: tuple[Note, ...] = ()
    source_id: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "notes", tuple(self.notes))

    def __len__(self) -> int:
        return len(self.notes)

    def __iter__(self):
        return iter(self.notes)

    def __getitem__(self, i):
        return self.notes[i]

    @classmethod
    def from_tuples(cls, items: Iterable[tuple], source_id: str = "") -> "NoteSequence":
        """Build from ``(pitch, onset, offset[, velocity])`` tuples."""
        return cls(tuple(Note(*t) for t in items), source_id)

    def as_tuples(self) -> list[tuple[int, float, float]]:
        return [(n.pitch, n.onset, n.offset) for n in self.notes]

    @property
    def end_time(self) -> float:
        return max((n.offset for n in self.notes), default=0.0)

    @property
    def monophonic(self) -> bool:
        return is_monophonic(self)


def _sort_key(n: Note):
    return (n.onset, n.pitch, n.offset, n.velocity)


def normalize(seq: NoteSequence) -> NoteSequence:
    """Sort notes by (onset, pitch) and drop notes with non-positive duration."""
    kept = sorted((n for n in seq.notes if n.offset > n.onset), key=_sort_key)
    return NoteSequence(tuple(kept), seq.source_id)


def is_monophonic(seq: NoteSequence) -> bool:
    """True iff no two sounding intervals ``[onset, offset)`` overlap.

    Expects a normalized sequence; with notes sorted by onset it is enough to
    compare each note against the latest offset seen so far.
    """
    latest = float("-inf")
    for n in seq.notes:
        if n.onset < latest:
            return False
        latest = max(latest, n.offset)
    return True
