import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import monophonic_sequences
from melodyclf.events import (
    EOS_ID,
    PAD_ID,
    EncodedSample,
    Event,
    EventKind,
    IdOutOfVocab,
    PerformanceConfig,
    PitchOutOfRange,
    ValueOutOfRange,
    decode_events,
    dumps_jsonl,
    encode_events,
    event_to_id,
    id_to_event,
    prepare_sequence,
    read_jsonl,
    vocab_size,
)
from melodyclf.notes import NoteSequence

CFG100 = PerformanceConfig(21, 108, 100, 0)


def seq(*tuples):
    return NoteSequence.from_tuples(tuples)


@pytest.mark.parametrize(
    "cfg, expected",
    [((21, 108, 100, 0), 278), ((21, 108, 1, 0), 179), ((0, 127, 10, 0), 268)],
)
def test_vocab_size(cfg, expected):
    assert vocab_size(PerformanceConfig(*cfg)) == expected


def test_event_ids():
    assert event_to_id(Event(EventKind.NOTE_ON, 60), CFG100) == 41
    assert event_to_id(Event(EventKind.TIME_SHIFT, 100), CFG100) == 277
    assert event_to_id(Event(EventKind.PAD), CFG100) == 0
    assert event_to_id(Event(EventKind.EOS), CFG100) == 1


@pytest.mark.parametrize(
    "event",
    [Event(EventKind.NOTE_ON, 20), Event(EventKind.NOTE_OFF, 109), Event(EventKind.TIME_SHIFT, 0),
     Event(EventKind.TIME_SHIFT, 101), Event(EventKind.VELOCITY, 1)],
)
def test_event_to_id_out_of_range(event):
    with pytest.raises(ValueOutOfRange):
        event_to_id(event, CFG100)


@pytest.mark.parametrize("steps", [1, 2, 5, 10, 20, 50, 100])
@pytest.mark.parametrize("bins", [0, 3])
def test_id_layout_is_bijection(steps, bins):
    cfg = PerformanceConfig(21, 108, steps, bins)
    V = vocab_size(cfg)
    events = [id_to_event(i, cfg) for i in range(V)]
    assert len(set(events)) == V
    assert [event_to_id(e, cfg) for e in events] == list(range(V))
    # enumerate constructible events independently of the layout
    constructible = (
        [Event(EventKind.NOTE_ON, p) for p in range(21, 109)]
        + [Event(EventKind.NOTE_OFF, p) for p in range(21, 109)]
        + [Event(EventKind.TIME_SHIFT, k) for k in range(1, steps + 1)]
        + [Event(EventKind.VELOCITY, k) for k in range(1, bins + 1)]
    )
    assert set(events) == set(constructible) | {Event(EventKind.PAD), Event(EventKind.EOS)}
    assert V == len(constructible) + 2
    with pytest.raises(IdOutOfVocab):
        id_to_event(V, cfg)


def test_encode_single_note():
    assert encode_events(seq((60, 0.0, 0.5)), CFG100) == [41, 227, 129, 1]


def test_encode_splits_long_gap():
    out = encode_events(seq((60, 0.0, 0.5), (62, 2.85, 3.0)), CFG100)
    assert out == [41, 227, 129, 277, 277, 212, 43, 192, 131, 1]


def test_encode_coarse_widens_note():
    cfg = PerformanceConfig(21, 108, 1, 0)
    # TIME_SHIFT(1) is the last id of a 179-entry vocabulary
    shift1 = event_to_id(Event(EventKind.TIME_SHIFT, 1), cfg)
    assert shift1 == vocab_size(cfg) - 1 == 178
    assert encode_events(seq((60, 0.4, 0.7)), cfg) == [41, shift1, 129, 1]


def test_encode_leading_rest_and_repeated_notes():
    # repeated pitch back to back: NOTE_OFF must precede the next NOTE_ON
    out = encode_events(seq((60, 0.25, 0.5), (60, 0.5, 0.75)), CFG100)
    assert out == [177 + 25, 41, 177 + 25, 129, 41, 177 + 25, 129, EOS_ID]


def test_encode_empty():
    assert encode_events(seq(), CFG100) == [EOS_ID]


def test_encode_rejects_out_of_range_pitch():
    with pytest.raises(PitchOutOfRange):
        encode_events(seq((20, 0, 1)), CFG100)


def test_quantize_rounds_half_up():
    # 0.125 s is exactly 12.5 steps at 100 steps/s
    out = encode_events(seq((60, 0.0, 0.125)), CFG100)
    assert out[1] == 177 + 13


def test_decode_examples():
    assert decode_events([41, 227, 129], CFG100).as_tuples() == [(60, 0.0, 0.5)]
    assert decode_events([], CFG100).as_tuples() == []
    assert decode_events([41], CFG100).as_tuples() == [(60, 0.0, 0.01)]


def test_decode_ignores_pad_eos_and_stray_off():
    ids = [0, 129, 41, 227, 129, 1, 0, 0]
    assert decode_events(ids, CFG100).as_tuples() == [(60, 0.0, 0.5)]


def test_decode_rejects_bad_id():
    with pytest.raises(IdOutOfVocab):
        decode_events([278], CFG100)


def test_prepare_sequence():
    ids = list(range(2, 152))
    out = prepare_sequence(ids, 200)
    assert out.tolist() == ids + [0] * 50
    long = list(np.arange(250) % 270 + 2)
    assert prepare_sequence(long, 200).tolist() == long[:200]
    exact = list(range(2, 202))
    assert prepare_sequence(exact, 200).tolist() == exact


def _max_boundary_error(a: NoteSequence, b: NoteSequence) -> float:
    assert len(a) == len(b)
    assert [n.pitch for n in a] == [n.pitch for n in b]
    return max(
        (max(abs(x.onset - y.onset), abs(x.offset - y.offset)) for x, y in zip(a, b)),
        default=0.0,
    )


@settings(max_examples=200, deadline=None)
@given(monophonic_sequences(min_dur=0.01))
def test_round_trip_at_100_steps(s):
    back = decode_events(encode_events(s, CFG100), CFG100)
    assert _max_boundary_error(s, back) <= 0.005 + 1e-9


@settings(max_examples=100, deadline=None)
@given(monophonic_sequences(min_dur=0.01))
def test_steps_1_gives_integer_seconds(s):
    cfg = PerformanceConfig(21, 108, 1, 0)
    for n in decode_events(encode_events(s, cfg), cfg):
        assert n.onset == math.floor(n.onset) and n.offset == math.floor(n.offset)


@settings(max_examples=100, deadline=None)
@given(monophonic_sequences(min_dur=0.01), st.sampled_from([1, 2, 5, 10, 20, 50, 100]))
def test_time_shift_bounds(s, steps):
    cfg = PerformanceConfig(21, 108, steps, 0)
    for i in encode_events(s, cfg):
        e = id_to_event(i, cfg)
        if e.kind is EventKind.TIME_SHIFT:
            assert 1 <= e.value <= steps


def _total_error(s, steps):
    cfg = PerformanceConfig(21, 108, steps, 0)
    back = decode_events(encode_events(s, cfg), cfg)
    return sum(abs(x.onset - y.onset) + abs(x.offset - y.offset) for x, y in zip(s, back))


@settings(max_examples=100, deadline=None)
@given(
    monophonic_sequences(min_dur=1.0),
    st.sampled_from([(100, 50), (100, 20), (100, 10), (100, 1), (50, 10), (20, 5), (10, 2), (2, 1), (50, 1)]),
)
def test_finer_resolution_never_worse(s, pair):
    fine, coarse = pair
    assert _total_error(s, fine) <= _total_error(s, coarse) + 1e-9


def test_jsonl_round_trip(tmp_path):
    samples = [EncodedSample("a", 1, 100, (41, 227, 129, 1)), EncodedSample("b", 0, 100, (1,))]
    p = tmp_path / "d.jsonl"
    p.write_text(dumps_jsonl(samples))
    assert read_jsonl(p) == samples
    assert p.read_text().splitlines()[0] == '{"id":"a","label":1,"steps_per_second":100,"events":[41,227,129,1]}'


def test_jsonl_rejects_bad_label():
    with pytest.raises(ValueError):
        EncodedSample.from_json('{"id":"a","label":2,"steps_per_second":100,"events":[1]}')
