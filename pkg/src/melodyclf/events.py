"""Performance-event vocabulary: NOTE_ON / NOTE_OFF / TIME_SHIFT with PAD and EOS.

Id layout (frozen, part of the on-disk contract)::

    0                 PAD
    1                 EOS
    2 .. 2+P-1        NOTE_ON(min_pitch .. max_pitch)
    2+P .. 2+2P-1     NOTE_OFF(min_pitch .. max_pitch)
    2+2P .. 2+2P+S-1  TIME_SHIFT(1 .. S)
    then              VELOCITY bins (reserved; always 0 in this pipeline)

where ``P = max_pitch - min_pitch + 1`` and ``S = steps_per_second``.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict, deque
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .notes import Note, NoteSequence, normalize

PAD_ID = 0
EOS_ID = 1

# Round-half-up guard so decimal ties like 0.015 s at 100 steps/s go up.
_TIE_EPS = 1e-9


class EventCodecError(ValueError):
    pass


class ValueOutOfRange(EventCodecError):
    pass


class PitchOutOfRange(EventCodecError):
    pass


class IdOutOfVocab(EventCodecError):
    pass


@dataclass(frozen=True)
class PerformanceConfig:
    min_pitch: int = 21
    max_pitch: int = 108
    steps_per_second: int = 100
    num_velocity_bins: int = 0

    def __post_init__(self) -> None:
        if not (0 <= self.min_pitch <= self.max_pitch <= 127):
            raise ValueError(
                f"need 0 <= min_pitch <= max_pitch <= 127, got {self.min_pitch}..{self.max_pitch}"
            )
        if self.steps_per_second < 1:
            raise ValueError(f"steps_per_second must be >= 1, got {self.steps_per_second}")
        if self.num_velocity_bins < 0:
            raise ValueError("num_velocity_bins must be >= 0")

    @property
    def num_pitches(self) -> int:
        return self.max_pitch - self.min_pitch + 1

    @property
    def vocab_size(self) -> int:
        return vocab_size(self)


class EventKind(Enum):
    PAD = "PAD"
    EOS = "EOS"
    NOTE_ON = "NOTE_ON"
    NOTE_OFF = "NOTE_OFF"
    TIME_SHIFT = "TIME_SHIFT"
    VELOCITY = "VELOCITY"


@dataclass(frozen=True)
class Event:
    kind: EventKind
    value: int | None = None

    def __repr__(self) -> str:
        if self.value is None:
            return self.kind.value
        return f"{self.kind.value}({self.value})"


def vocab_size(cfg: PerformanceConfig) -> int:
    return 2 * cfg.num_pitches + cfg.steps_per_second + cfg.num_velocity_bins + 2


def event_to_id(e: Event, cfg: PerformanceConfig) -> int:
    P = cfg.num_pitches
    kind, v = e.kind, e.value
    if kind is EventKind.PAD:
        return PAD_ID
    if kind is EventKind.EOS:
        return EOS_ID
    if kind in (EventKind.NOTE_ON, EventKind.NOTE_OFF):
        if v is None or not cfg.min_pitch <= v <= cfg.max_pitch:
            raise ValueOutOfRange(f"{kind.value} pitch {v} outside [{cfg.min_pitch}, {cfg.max_pitch}]")
        base = 2 if kind is EventKind.NOTE_ON else 2 + P
        return base + (v - cfg.min_pitch)
    if kind is EventKind.TIME_SHIFT:
        if v is None or not 1 <= v <= cfg.steps_per_second:
            raise ValueOutOfRange(f"TIME_SHIFT({v}) outside [1, {cfg.steps_per_second}]")
        return 2 + 2 * P + (v - 1)
    if kind is EventKind.VELOCITY:
        if v is None or not 1 <= v <= cfg.num_velocity_bins:
            raise ValueOutOfRange(f"VELOCITY({v}) outside [1, {cfg.num_velocity_bins}]")
        return 2 + 2 * P + cfg.steps_per_second + (v - 1)
    raise ValueOutOfRange(f"unknown event kind {kind!r}")


def id_to_event(i: int, cfg: PerformanceConfig) -> Event:
    P = cfg.num_pitches
    S = cfg.steps_per_second
    i = int(i)
    if i < 0 or i >= vocab_size(cfg):
        raise IdOutOfVocab(f"id {i} outside [0, {vocab_size(cfg)})")
    if i == PAD_ID:
        return Event(EventKind.PAD)
    if i == EOS_ID:
        return Event(EventKind.EOS)
    i -= 2
    if i < P:
        return Event(EventKind.NOTE_ON, cfg.min_pitch + i)
    i -= P
    if i < P:
        return Event(EventKind.NOTE_OFF, cfg.min_pitch + i)
    i -= P
    if i < S:
        return Event(EventKind.TIME_SHIFT, i + 1)
    return Event(EventKind.VELOCITY, i - S + 1)


def quantize(t: float, steps_per_second: int) -> int:
    """Nearest step index, ties rounding up."""
    return math.floor(t * steps_per_second + 0.5 + _TIE_EPS)


def encode_events(seq: NoteSequence, cfg: PerformanceConfig) -> list[int]:
    """Encode a melody as event ids, terminated by EOS.

    Onsets and offsets are snapped to the step grid. A note that collapses to
    zero steps keeps one step. At equal times NOTE_OFF precedes NOTE_ON, and
    gaps longer than one second are emitted as several TIME_SHIFT chunks.
    """
    S = cfg.steps_per_second
    P = cfg.num_pitches
    on_base, off_base, shift_base = 2, 2 + P, 2 + 2 * P - 1

    timeline: list[tuple[int, int, int, int]] = []
    for idx, n in enumerate(seq.notes):
        if not cfg.min_pitch <= n.pitch <= cfg.max_pitch:
            raise PitchOutOfRange(
                f"pitch {n.pitch} outside [{cfg.min_pitch}, {cfg.max_pitch}]"
            )
        on = quantize(n.onset, S)
        off = max(quantize(n.offset, S), on + 1)
        timeline.append((off, 0, idx, off_base + n.pitch - cfg.min_pitch))
        timeline.append((on, 1, idx, on_base + n.pitch - cfg.min_pitch))
    timeline.sort()

    ids: list[int] = []
    clock = 0
    for t, _, _, event_id in timeline:
        gap = t - clock
        while gap > 0:
            k = min(gap, S)
            ids.append(shift_base + k)
            gap -= k
        clock = t
        ids.append(event_id)
    ids.append(EOS_ID)
    return ids


def decode_events(ids: Iterable[int], cfg: PerformanceConfig, source_id: str = "") -> NoteSequence:
    """Replay an id stream into notes.

    NOTE_OFF closes the oldest open note of its pitch; stray NOTE_OFFs are
    dropped and notes still open at the end are closed there. Every decoded
    note lasts at least one step.
    """
    S = cfg.steps_per_second
    V = vocab_size(cfg)
    P = cfg.num_pitches
    clock = 0
    open_notes: dict[int, deque[int]] = defaultdict(deque)
    spans: list[tuple[int, int, int]] = []

    for raw in ids:
        i = int(raw)
        if i < 0 or i >= V:
            raise IdOutOfVocab(f"id {i} outside [0, {V})")
        if i < 2:
            continue
        j = i - 2
        if j < P:
            open_notes[cfg.min_pitch + j].append(clock)
        elif j < 2 * P:
            pitch = cfg.min_pitch + j - P
            if open_notes[pitch]:
                on = open_notes[pitch].popleft()
                spans.append((pitch, on, max(clock, on + 1)))
        elif j < 2 * P + S:
            clock += j - 2 * P + 1
        # velocity ids carry no timing and are ignored

    for pitch, queue in open_notes.items():
        for on in queue:
            spans.append((pitch, on, max(clock, on + 1)))

    notes = [Note(p, on / S, off / S) for p, on, off in spans]
    return normalize(NoteSequence(tuple(notes), source_id))


def prepare_sequence(ids: Sequence[int], max_len: int = 200) -> np.ndarray:
    """Truncate to the first ``max_len`` ids or right-pad with PAD."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    out = np.zeros(max_len, dtype=np.int64)
    head = list(ids)[:max_len]
    out[: len(head)] = head
    return out


@dataclass(frozen=True)
class EncodedSample:
    """One line of the JSONL interchange format."""

    id: str
    label: int
    steps_per_second: int
    events: tuple[int, ...]

    def to_json(self) -> str:
        return json.dumps(
            {
                "id": self.id,
                "label": int(self.label),
                "steps_per_second": int(self.steps_per_second),
                "events": [int(e) for e in self.events],
            },
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> "EncodedSample":
        obj = json.loads(line)
        try:
            label = int(obj["label"])
            if label not in (0, 1):
                raise ValueError(f"label must be 0 or 1, got {label}")
            return cls(
                id=str(obj["id"]),
                label=label,
                steps_per_second=int(obj["steps_per_second"]),
                events=tuple(int(e) for e in obj["events"]),
            )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"bad sample record: {exc}") from exc


def dumps_jsonl(samples: Iterable[EncodedSample]) -> str:
    return "".join(s.to_json() + "\n" for s in samples)


def read_jsonl(path: str | Path) -> list[EncodedSample]:
    with open(path, encoding="utf-8") as fh:
        return [EncodedSample.from_json(line) for line in fh if line.strip()]
