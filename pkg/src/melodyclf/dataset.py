"""Seeded synthetic melodies with two controllable axes: pitch and timing.

Class 1 plays the "human-composed" role and class 0 the "machine" role. A
profile picks the pitch model (diatonic stepwise vs uniform random) and the
timing grid (strict 16ths vs Gaussian jitter), so pitch-only and timing-only
tasks can be built from the same generator.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence, TypeVar

import numpy as np

from .notes import Note, NoteSequence, is_monophonic

C_MAJOR = (0, 2, 4, 5, 7, 9, 11)
SCALE_LOW, SCALE_HIGH = 48, 84
UNIFORM_LOW, UNIFORM_HIGH = 21, 108
SIXTEENTHS_PER_BAR = 16
# A jittered boundary never moves further than this, keeping 16th-grid order.
JITTER_CLIP_S = 0.06

# note lengths in 16ths and their weights
_DURATIONS = np.array([1, 2, 3, 4, 6, 8])
_DURATION_P = np.array([0.10, 0.35, 0.05, 0.30, 0.08, 0.12])
_REST_P = 0.1
# |interval| in scale steps, 0..4
_STEP_P = np.array([0.15, 0.40, 0.25, 0.12, 0.08])


class BadSpec(ValueError):
    pass


class SingleClassData(ValueError):
    pass


@dataclass(frozen=True)
class ClassProfile:
    pitch_model: str = "scale_stepwise"
    jitter_ms: float = 0.0
    repeat_phrases: bool = False

    @property
    def grid(self) -> str:
        return "strict_16th" if self.jitter_ms == 0 else f"jitter({self.jitter_ms:g}ms)"


@dataclass(frozen=True)
class SynthSpec:
    n_samples: int
    class1: ClassProfile = field(default_factory=ClassProfile)
    class0: ClassProfile = field(default_factory=lambda: ClassProfile("uniform_random"))
    bars: int = 16
    tempo_qpm: float = 120.0
    seed: int = 0

    def validate(self) -> None:
        if self.n_samples < 2 or self.n_samples % 2:
            raise BadSpec(f"n_samples must be even and >= 2, got {self.n_samples}")
        if self.bars < 1:
            raise BadSpec("bars must be >= 1")
        if self.tempo_qpm <= 0:
            raise BadSpec("tempo_qpm must be positive")
        for prof in (self.class0, self.class1):
            if prof.pitch_model not in ("scale_stepwise", "uniform_random"):
                raise BadSpec(f"unknown pitch_model {prof.pitch_model!r}")
            if prof.jitter_ms < 0:
                raise BadSpec("jitter sigma must be >= 0")

    @property
    def sixteenth(self) -> float:
        return 60.0 / self.tempo_qpm / 4


@dataclass(frozen=True)
class LabeledSequence:
    id: str
    label: int
    seq: NoteSequence


def pitch_task(n_samples: int = 1000, seed: int = 0) -> SynthSpec:
    """Classes differ only in pitch content; both on a strict grid."""
    return SynthSpec(
        n_samples,
        class1=ClassProfile("scale_stepwise", 0.0, repeat_phrases=True),
        class0=ClassProfile("uniform_random", 0.0, repeat_phrases=False),
        seed=seed,
    )


def timing_task(n_samples: int = 1000, seed: int = 0, sigma_ms: float = 30.0) -> SynthSpec:
    """Classes differ only in onset/offset jitter; identical pitch model."""
    return SynthSpec(
        n_samples,
        class1=ClassProfile("scale_stepwise", 0.0, repeat_phrases=True),
        class0=ClassProfile("scale_stepwise", sigma_ms, repeat_phrases=True),
        seed=seed,
    )


def _scale_pitches() -> np.ndarray:
    return np.array([p for p in range(SCALE_LOW, SCALE_HIGH + 1) if p % 12 in C_MAJOR])


def _rhythm(rng: np.random.Generator, bars: int) -> list[tuple[int, int]]:
    """(onset, duration) pairs in 16ths; rests are gaps between them."""
    out = []
    for bar in range(bars):
        pos = 0
        while pos < SIXTEENTHS_PER_BAR:
            dur = int(min(rng.choice(_DURATIONS, p=_DURATION_P), SIXTEENTHS_PER_BAR - pos))
            if rng.random() >= _REST_P:
                out.append((bar * SIXTEENTHS_PER_BAR + pos, dur))
            pos += dur
    return out


def _walk(rng: np.random.Generator, n: int, start: int, size: int) -> list[int]:
    """Scale-index random walk, steps of at most 4, reflecting off the ends."""
    out, idx = [], start
    for _ in range(n):
        out.append(idx)
        step = int(rng.choice(5, p=_STEP_P)) * (1 if rng.random() < 0.5 else -1)
        idx += step
        if idx < 0:
            idx = -idx
        if idx >= size:
            idx = 2 * (size - 1) - idx
    return out


def _closing_walk(rng, n: int, start: int, target: int, size: int) -> list[int]:
    # resample until the walk ends within one step of ``target``; a handful
    # of tries suffices, and the last draw is forced to close if not
    for _ in range(64):
        w = _walk(rng, n, start, size)
        if not w or abs(w[-1] - target) <= 4:
            return w
    w = _walk(rng, n, start, size)
    w[-1] = int(np.clip(target, w[-2] - 4, w[-2] + 4)) if n > 1 else w[-1]
    return w


def _pitches(rng: np.random.Generator, model: str, n: int) -> list[int]:
    if model == "uniform_random":
        return [int(p) for p in rng.integers(UNIFORM_LOW, UNIFORM_HIGH + 1, size=n)]
    scale = _scale_pitches()
    start = int(rng.integers(len(scale) // 3, 2 * len(scale) // 3))
    return [int(scale[i]) for i in _walk(rng, n, start, len(scale))]


def _grid_notes(rng: np.random.Generator, prof: ClassProfile, bars: int) -> list[tuple[int, int, int]]:
    """(pitch, onset16, offset16) for one melody.

    With phrase repetition the melody is built from 4-bar phrases in an AABA
    pattern (cycled if longer than 16 bars); otherwise it is one long phrase.
    Stepwise phrases are drawn so that every join between them is also a step.
    """
    if prof.repeat_phrases and bars % 4 == 0:
        a_rhythm, b_rhythm = _rhythm(rng, 4), _rhythm(rng, 4)
        if prof.pitch_model == "scale_stepwise":
            scale = _scale_pitches()
            size = len(scale)
            s0 = int(rng.integers(size // 3, 2 * size // 3))
            a_idx = _closing_walk(rng, len(a_rhythm), s0, s0, size)
            b_start = a_idx[-1] if a_idx else s0
            b_idx = _closing_walk(rng, len(b_rhythm) + 1, b_start, s0, size)[1:]
            a_p = [int(scale[i]) for i in a_idx]
            b_p = [int(scale[i]) for i in b_idx]
        else:
            a_p = _pitches(rng, prof.pitch_model, len(a_rhythm))
            b_p = _pitches(rng, prof.pitch_model, len(b_rhythm))
        a, b = (a_rhythm, a_p), (b_rhythm, b_p)
        form = [a, a, b, a]
        plan = [(form[i % 4], 4) for i in range(bars // 4)]
    else:
        rhythm = _rhythm(rng, bars)
        plan = [((rhythm, _pitches(rng, prof.pitch_model, len(rhythm))), bars)]
    notes = []
    base = 0
    for (rhythm, pitches), n_bars in plan:
        for (on, dur), p in zip(rhythm, pitches):
            notes.append((p, base + on, base + on + dur))
        base += n_bars * SIXTEENTHS_PER_BAR
    return notes


def _realize(rng, grid_notes, sixteenth, jitter_s, end_s):
    onsets = np.array([n[1] for n in grid_notes], dtype=float) * sixteenth
    offsets = np.array([n[2] for n in grid_notes], dtype=float) * sixteenth
    if jitter_s > 0:
        k = len(grid_notes)
        onsets = onsets + np.clip(rng.normal(0.0, jitter_s, k), -JITTER_CLIP_S, JITTER_CLIP_S)
        offsets = offsets + np.clip(rng.normal(0.0, jitter_s, k), -JITTER_CLIP_S, JITTER_CLIP_S)
        onsets = np.maximum(onsets, 0.0)
        offsets[:-1] = np.minimum(offsets[:-1], onsets[1:])
        offsets = np.minimum(offsets, end_s)
    return [Note(p, float(a), float(b)) for (p, _, _), a, b in zip(grid_notes, onsets, offsets)]


def generate_one(spec: SynthSpec, index: int) -> LabeledSequence:
    """Sample ``index`` of the dataset; even indices are class 1."""
    label = 1 if index % 2 == 0 else 0
    prof = spec.class1 if label else spec.class0
    rng = np.random.default_rng([spec.seed, index])
    grid = _grid_notes(rng, prof, spec.bars)
    end_s = spec.bars * SIXTEENTHS_PER_BAR * spec.sixteenth
    notes = _realize(rng, grid, spec.sixteenth, prof.jitter_ms / 1000.0, end_s)
    sid = f"synth_{index:05d}"
    seq = NoteSequence(tuple(notes), sid)
    assert is_monophonic(seq)
    return LabeledSequence(sid, label, seq)


def generate(spec: SynthSpec) -> list[LabeledSequence]:
    spec.validate()
    return [generate_one(spec, i) for i in range(spec.n_samples)]


T = TypeVar("T")


def split(data: Sequence[T], val_fraction: float, seed: int) -> tuple[list[T], list[T]]:
    """Stratified, seeded train/validation partition.

    Each class sends ``round(n_c * val_fraction)`` items to validation, clamped
    so both sides keep at least one item per class. Input order is kept on
    both sides. Items need a ``label`` attribute.
    """
    if not 0 < val_fraction < 1:
        raise ValueError(f"val_fraction must be in (0, 1), got {val_fraction}")
    labels = np.array([int(d.label) for d in data])
    classes = sorted(set(labels.tolist()))
    if len(classes) < 2:
        raise SingleClassData("both classes must be present")
    rng = np.random.default_rng(seed)
    val_idx: set[int] = set()
    for c in classes:
        idx = np.flatnonzero(labels == c)
        if len(idx) < 2:
            raise SingleClassData(f"class {c} has {len(idx)} sample(s); need 2 to split")
        k = int(np.floor(len(idx) * val_fraction + 0.5))
        k = min(max(k, 1), len(idx) - 1)
        val_idx.update(rng.permutation(idx)[:k].tolist())
    train = [d for i, d in enumerate(data) if i not in val_idx]
    val = [d for i, d in enumerate(data) if i in val_idx]
    return train, val


def labels_csv(items: Sequence[LabeledSequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "label"])
    for it in items:
        w.writerow([it.id, it.label])
    return buf.getvalue()


def read_labels_csv(text: str) -> dict[str, int]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or "id" not in reader.fieldnames or "label" not in reader.fieldnames:
        raise ValueError("labels CSV needs an 'id,label' header")
    out = {}
    for row in reader:
        label = int(row["label"])
        if label not in (0, 1):
            raise ValueError(f"label for {row['id']!r} must be 0 or 1, got {label}")
        out[row["id"]] = label
    return out
