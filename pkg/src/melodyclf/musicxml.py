"""Melody extraction from uncompressed score-partwise MusicXML lead sheets.

Only the first part and its first voice are kept. Chords collapse to their
top note, tied notes merge, rests and other voices only move the cursor, and
everything after ``max_bars`` written measures is dropped. Times come out in
seconds at the current tempo (120 QPM unless the score says otherwise).
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass

from .notes import Note, NoteSequence, normalize

DEFAULT_QPM = 120.0
_STEP_SEMITONES = {"C": 0, "D": 2, "E": 4, "F": 5, "G": 7, "A": 9, "B": 11}
_BEAT_UNIT_QUARTERS = {
    "whole": 4.0, "half": 2.0, "quarter": 1.0, "eighth": 0.5, "16th": 0.25, "32nd": 0.125,
}


class MusicXmlError(ValueError):
    """Base class for every structured MusicXML failure."""


class UnparseableXml(MusicXmlError):
    pass


class CompressedMusicXml(MusicXmlError):
    pass


class NotPartwise(MusicXmlError):
    pass


class NoParts(MusicXmlError):
    pass


class BadDivisions(MusicXmlError):
    pass


class MalformedNote(MusicXmlError):
    pass


@dataclass
class MeasureCursor:
    divisions: float | None = None
    tempo_qpm: float = DEFAULT_QPM
    measure_index: int = 0
    position_div: float = 0.0
    time_s: float = 0.0

    def seconds_for(self, duration_div: float) -> float:
        if self.divisions is None:
            raise BadDivisions("note duration before any <divisions> element")
        return duration_div / self.divisions * 60.0 / self.tempo_qpm

    def advance(self, duration_div: float) -> None:
        self.time_s += self.seconds_for(duration_div)
        self.position_div += duration_div


def _local(tag) -> str:
    return tag.rsplit("}", 1)[-1] if isinstance(tag, str) else ""


def _child(el, name):
    for c in el:
        if _local(c.tag) == name:
            return c
    return None


def _children(el, name):
    return [c for c in el if _local(c.tag) == name]


def _number(text, what: str, exc=MalformedNote) -> float:
    try:
        v = float((text or "").strip())
    except ValueError:
        raise exc(f"{what} is not a number: {text!r}") from None
    if v != v or v in (float("inf"), float("-inf")):
        raise exc(f"{what} is not finite: {text!r}")
    return v


def _midi_pitch(pitch_el) -> int:
    step_el, oct_el = _child(pitch_el, "step"), _child(pitch_el, "octave")
    if step_el is None or oct_el is None:
        raise MalformedNote("pitch without step/octave")
    step = (step_el.text or "").strip().upper()
    if step not in _STEP_SEMITONES:
        raise MalformedNote(f"unknown pitch step {step!r}")
    alter_el = _child(pitch_el, "alter")
    alter = round(_number(alter_el.text, "alter")) if alter_el is not None else 0
    octave = int(_number(oct_el.text, "octave"))
    midi = (octave + 1) * 12 + _STEP_SEMITONES[step] + alter
    if not 0 <= midi <= 127:
        raise MalformedNote(f"pitch {step}{octave} (alter {alter}) is outside MIDI range")
    return midi


def _tempo_from(el) -> float | None:
    """Tempo (quarters per minute) from a <sound> or <direction> element, if any."""
    tag = _local(el.tag)
    if tag == "sound" and el.get("tempo") is not None:
        return _number(el.get("tempo"), "tempo", MusicXmlError)
    if tag == "direction":
        for sub in el.iter():
            t = _local(sub.tag)
            if t == "sound" and sub.get("tempo") is not None:
                return _number(sub.get("tempo"), "tempo", MusicXmlError)
        for dt in _children(el, "direction-type"):
            metro = _child(dt, "metronome")
            if metro is None:
                continue
            unit, per_min = _child(metro, "beat-unit"), _child(metro, "per-minute")
            if unit is None or per_min is None:
                continue
            quarters = _BEAT_UNIT_QUARTERS.get((unit.text or "").strip())
            if quarters is None:
                continue
            if _child(metro, "beat-unit-dot") is not None:
                quarters *= 1.5
            try:
                return float((per_min.text or "").strip()) * quarters
            except ValueError:
                continue
    return None


def _has_tie(note_el, kind: str) -> bool:
    if any(t.get("type") == kind for t in _children(note_el, "tie")):
        return True
    notations = _child(note_el, "notations")
    return notations is not None and any(t.get("type") == kind for t in _children(notations, "tied"))


def ingest_musicxml(text: str | bytes, max_bars: int = 16, source_id: str = "") -> NoteSequence:
    """Extract the melody line of a score-partwise document as a NoteSequence."""
    if max_bars < 1:
        raise ValueError("max_bars must be >= 1")
    head = text[:4] if isinstance(text, bytes) else text[:4].encode("latin-1", "replace")
    if head == b"PK\x03\x04":
        raise CompressedMusicXml("compressed .mxl archives are not supported; unzip to .xml first")
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise UnparseableXml(f"XML parse error: {exc}") from None
    except (ValueError, RecursionError) as exc:
        raise UnparseableXml(f"XML parse error: {exc}") from None
    if _local(root.tag) != "score-partwise":
        raise NotPartwise(f"root element is <{_local(root.tag)}>, expected <score-partwise>")
    parts = _children(root, "part")
    if not parts:
        raise NoParts("score has no <part>")

    cur = MeasureCursor()
    melody_voice: str | None = None
    spans: list[list] = []  # [pitch, onset, offset]
    tie_open: int | None = None  # index into spans of a note awaiting its tie continuation
    last_onset_idx: int | None = None  # span started at the most recent non-chord onset

    for m_index, measure in enumerate(_children(parts[0], "measure")):
        if m_index >= max_bars:
            break
        cur.measure_index = m_index
        cur.position_div = 0.0
        measure_start = cur.time_s
        measure_end = cur.time_s
        prev_onset = cur.time_s
        for el in measure:
            tag = _local(el.tag)
            if tag == "attributes":
                div_el = _child(el, "divisions")
                if div_el is not None:
                    d = _number(div_el.text, "divisions", BadDivisions)
                    if d <= 0:
                        raise BadDivisions(f"divisions must be positive, got {d:g}")
                    cur.divisions = d
            elif tag in ("sound", "direction"):
                q = _tempo_from(el)
                if q is not None:
                    if q <= 0:
                        raise MusicXmlError(f"tempo must be positive, got {q:g}")
                    cur.tempo_qpm = q
            elif tag in ("backup", "forward"):
                dur_el = _child(el, "duration")
                if dur_el is None:
                    raise MalformedNote(f"<{tag}> without <duration>")
                d = _number(dur_el.text, f"{tag} duration")
                if d < 0:
                    raise MalformedNote(f"negative {tag} duration")
                cur.advance(-d if tag == "backup" else d)
                if cur.time_s < measure_start - 1e-9:
                    raise MalformedNote("<backup> moves before the start of the measure")
                measure_end = max(measure_end, cur.time_s)
            elif tag == "note":
                if _child(el, "grace") is not None:
                    continue
                dur_el = _child(el, "duration")
                if dur_el is None:
                    if _child(el, "cue") is not None:
                        continue
                    raise MalformedNote("note without <duration>")
                dur = _number(dur_el.text, "note duration")
                if dur < 0:
                    raise MalformedNote("negative note duration")
                is_chord = _child(el, "chord") is not None
                voice_el = _child(el, "voice")
                voice = (voice_el.text or "").strip() if voice_el is not None else "1"
                if melody_voice is None:
                    melody_voice = voice
                if is_chord:
                    onset = prev_onset
                else:
                    onset = cur.time_s
                    prev_onset = onset
                offset = onset + cur.seconds_for(dur)
                pitch_el = _child(el, "pitch")
                if voice == melody_voice and pitch_el is not None and _child(el, "rest") is None:
                    pitch = _midi_pitch(pitch_el)
                    if is_chord and last_onset_idx is not None and spans[last_onset_idx][1] == onset:
                        # chord member: keep the highest pitch sounding at this onset
                        if pitch > spans[last_onset_idx][0]:
                            spans[last_onset_idx][0] = pitch
                            spans[last_onset_idx][2] = offset
                    elif (
                        _has_tie(el, "stop")
                        and tie_open is not None
                        and spans[tie_open][0] == pitch
                        and abs(spans[tie_open][2] - onset) < 1e-6
                    ):
                        spans[tie_open][2] = offset
                        if not _has_tie(el, "start"):
                            tie_open = None
                        last_onset_idx = None
                    else:
                        spans.append([pitch, onset, offset])
                        last_onset_idx = len(spans) - 1
                        tie_open = last_onset_idx if _has_tie(el, "start") else None
                if not is_chord:
                    cur.advance(dur)
                measure_end = max(measure_end, cur.time_s)
        cur.time_s = measure_end

    if any(not (abs(on) < float("inf") and abs(off) < float("inf")) for _, on, off in spans):
        raise MalformedNote("note times overflow")
    spans.sort(key=lambda s: (s[1], s[0]))
    # keep the line monophonic: cut each note at the next onset
    for a, b in zip(spans, spans[1:]):
        if a[2] > b[1]:
            a[2] = b[1]
    notes = [Note(int(p), max(on, 0.0), off) for p, on, off in spans if off > on]
    return normalize(NoteSequence(tuple(notes), source_id))
