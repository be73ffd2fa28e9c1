"""Standard MIDI File (format 0/1) reading and writing.

Reading merges every track into one note list: note-on/note-off pairs are
matched first-in first-out per (channel, pitch), ticks become seconds through
the merged tempo map, and the result is normalized. Writing always produces a
format-0 file at 480 ticks per quarter and a single 120 BPM tempo.
"""

from __future__ import annotations

import bisect
import struct
from collections import defaultdict, deque
from dataclasses import dataclass, field

from .notes import Note, NoteSequence, normalize

DEFAULT_TEMPO = 500_000  # microseconds per quarter, 120 BPM
WRITE_PPQ = 480
WRITE_VELOCITY = 64


class SmfError(ValueError):
    """Base class for every structured SMF failure."""


class MalformedHeader(SmfError):
    pass


class UnsupportedFormat(SmfError):
    pass


class TruncatedChunk(SmfError):
    pass


class BadVarint(SmfError):
    pass


class MalformedTrack(SmfError):
    pass


class PitchOutOfRange(SmfError):
    pass


@dataclass
class TempoMap:
    """Tempo changes as (tick, microseconds per quarter), sorted, starting at tick 0."""

    ppq: int
    entries: list[tuple[int, int]] = field(default_factory=list)
    _ticks: list[int] = field(default_factory=list, repr=False)
    _secs: list[float] = field(default_factory=list, repr=False)

    def __post_init__(self) -> None:
        if self.ppq <= 0:
            raise MalformedHeader(f"ticks per quarter must be positive, got {self.ppq}")
        # last tempo event wins when several share a tick
        by_tick = dict(sorted(self.entries, key=lambda e: e[0]))
        by_tick.setdefault(0, DEFAULT_TEMPO)
        self.entries = sorted(by_tick.items())
        self._ticks, self._secs = [], []
        sec = 0.0
        prev_tick, prev_tempo = 0, self.entries[0][1]
        for tick, tempo in self.entries:
            sec += (tick - prev_tick) * prev_tempo / 1e6 / self.ppq
            self._ticks.append(tick)
            self._secs.append(sec)
            prev_tick, prev_tempo = tick, tempo

    def seconds(self, tick: int) -> float:
        i = bisect.bisect_right(self._ticks, tick) - 1
        return self._secs[i] + (tick - self._ticks[i]) * self.entries[i][1] / 1e6 / self.ppq


class _Reader:
    def __init__(self, data: bytes, start: int = 0, end: int | None = None):
        self.data = data
        self.pos = start
        self.end = len(data) if end is None else end

    def byte(self) -> int:
        if self.pos >= self.end:
            raise TruncatedChunk("unexpected end of track data")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > self.end:
            raise TruncatedChunk(f"need {n} bytes at offset {self.pos}, chunk ends at {self.end}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def varint(self) -> int:
        value = 0
        for _ in range(4):
            b = self.byte()
            value = (value << 7) | (b & 0x7F)
            if not b & 0x80:
                return value
        raise BadVarint(f"variable-length quantity longer than 4 bytes at offset {self.pos}")


def _chunks(data: bytes, pos: int):
    while pos < len(data):
        if pos + 8 > len(data):
            raise TruncatedChunk(f"chunk header cut short at offset {pos}")
        kind = data[pos : pos + 4]
        (length,) = struct.unpack(">I", data[pos + 4 : pos + 8])
        if pos + 8 + length > len(data):
            raise TruncatedChunk(f"{kind!r} chunk declares {length} bytes, only {len(data) - pos - 8} left")
        yield kind, pos + 8, pos + 8 + length
        pos += 8 + length


def _read_track(data: bytes, start: int, end: int):
    """Yield (tick, kind, payload) for note and tempo events of one MTrk chunk."""
    r = _Reader(data, start, end)
    tick = 0
    status = None
    while r.pos < r.end:
        tick += r.varint()
        b = r.byte()
        if b == 0xFF:
            meta = r.byte()
            body = r.take(r.varint())
            if meta == 0x51:
                if len(body) != 3:
                    raise MalformedTrack(f"tempo event with {len(body)} data bytes")
                tempo = int.from_bytes(body, "big")
                if tempo == 0:
                    raise MalformedTrack("zero tempo")
                yield tick, "tempo", tempo
            elif meta == 0x2F:
                yield tick, "end", None
                return
            status = None
            continue
        if b in (0xF0, 0xF7):
            r.take(r.varint())
            status = None
            continue
        if b & 0x80:
            if b >= 0xF0:
                raise MalformedTrack(f"unsupported system message 0x{b:02X} in track")
            status = b
            first = r.byte()
        else:
            if status is None:
                raise MalformedTrack(f"running status without a prior status byte at offset {r.pos - 1}")
            first = b
        kind = status & 0xF0
        channel = status & 0x0F
        if kind in (0xC0, 0xD0):
            second = None
        else:
            second = r.byte()
        if first > 0x7F or (second is not None and second > 0x7F):
            raise MalformedTrack(f"data byte out of range at offset {r.pos - 1}")
        if kind == 0x90 and second > 0:
            yield tick, "on", (channel, first, second)
        elif kind == 0x80 or kind == 0x90:
            yield tick, "off", (channel, first)
    yield tick, "end", None


def parse_smf(data: bytes, source_id: str = "") -> NoteSequence:
    """Parse SMF bytes into a normalized NoteSequence (all tracks merged)."""
    data = bytes(data)
    if len(data) < 14 or data[:4] != b"MThd":
        raise MalformedHeader("missing MThd header")
    (hlen,) = struct.unpack(">I", data[4:8])
    if hlen < 6:
        raise MalformedHeader(f"header length {hlen} < 6")
    if 8 + hlen > len(data):
        raise TruncatedChunk("header chunk cut short")
    fmt, _ntracks, division = struct.unpack(">HHH", data[8:14])
    if fmt == 2:
        raise UnsupportedFormat("format 2 (independent sequences) is not supported")
    if fmt > 2:
        raise MalformedHeader(f"unknown SMF format {fmt}")
    if division & 0x8000:
        fps = 256 - (division >> 8)
        per_frame = division & 0xFF
        if fps not in (24, 25, 29, 30) or per_frame == 0:
            raise MalformedHeader(f"bad SMPTE division 0x{division:04X}")
        # SMPTE time: express as a fixed 1-second "quarter" at fps*per_frame ticks
        ppq = (30 if fps == 29 else fps) * per_frame
        smpte = True
    else:
        ppq = division
        smpte = False
        if ppq == 0:
            raise MalformedHeader("division of 0 ticks per quarter")

    tempos: list[tuple[int, int]] = []
    spans: list[tuple[int, int, int, int]] = []  # pitch, on tick, off tick, velocity
    for kind, start, end in _chunks(data, 8 + hlen):
        if kind != b"MTrk":
            continue
        open_notes: dict[tuple[int, int], deque] = defaultdict(deque)
        last_tick = 0
        for tick, ev, payload in _read_track(data, start, end):
            last_tick = tick
            if ev == "tempo":
                tempos.append((tick, payload))
            elif ev == "on":
                ch, pitch, vel = payload
                open_notes[(ch, pitch)].append((tick, vel))
            elif ev == "off":
                ch, pitch = payload
                q = open_notes.get((ch, pitch))
                if q:
                    on_tick, vel = q.popleft()
                    spans.append((pitch, on_tick, tick, vel))
        for (ch, pitch), q in open_notes.items():
            for on_tick, vel in q:
                spans.append((pitch, on_tick, last_tick, vel))

    if smpte:
        tmap = TempoMap(ppq, [(0, 1_000_000)])
    else:
        tmap = TempoMap(ppq, tempos)
    notes = [Note(p, tmap.seconds(a), tmap.seconds(b), v) for p, a, b, v in spans]
    return normalize(NoteSequence(tuple(notes), source_id))


def _varint(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(out))


def _to_tick(t: float) -> int:
    # 120 BPM: one quarter is half a second
    return int(t * WRITE_PPQ * 2 + 0.5)


def write_smf(seq: NoteSequence) -> bytes:
    """Serialize as format 0, 480 ticks per quarter, 120 BPM, velocity 64."""
    events: list[tuple[int, int, int]] = []  # tick, order (off first), pitch
    for n in seq.notes:
        if not 0 <= n.pitch <= 127:
            raise PitchOutOfRange(f"pitch {n.pitch} outside [0, 127]")
        on = _to_tick(n.onset)
        off = max(_to_tick(n.offset), on + 1)
        events.append((on, 1, n.pitch))
        events.append((off, 0, n.pitch))
    events.sort()

    body = bytearray()
    body += b"\x00\xFF\x51\x03" + DEFAULT_TEMPO.to_bytes(3, "big")
    prev = 0
    for tick, order, pitch in events:
        body += _varint(tick - prev)
        body += bytes((0x90, pitch, WRITE_VELOCITY) if order else (0x80, pitch, 0))
        prev = tick
    body += b"\x00\xFF\x2F\x00"

    header = b"MThd" + struct.pack(">IHHH", 6, 0, 1, WRITE_PPQ)
    return header + b"MTrk" + struct.pack(">I", len(body)) + bytes(body)
