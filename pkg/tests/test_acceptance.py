"""End-to-end acceptance gate: one test per criterion, one verdict line each.

The verdict lines are printed in the terminal summary (see conftest.py) and,
when run with ``-s``, as each criterion finishes.
"""

import time
from contextlib import contextmanager

import numpy as np
import pytest

import conftest
from conftest import random_monophonic
from melodyclf import cli
from melodyclf.classifier import DEFAULT_STEPS, TrainConfig, auc, sweep
from melodyclf.dataset import generate, pitch_task, timing_task
from melodyclf.events import (
    EventKind,
    PerformanceConfig,
    decode_events,
    encode_events,
    event_to_id,
    id_to_event,
    vocab_size,
)
from melodyclf.musicxml import MusicXmlError, ingest_musicxml
from melodyclf.nn import (
    CellKind,
    ModelSpec,
    cell_param_shapes,
    embedding_backward,
    embedding_forward,
    init_params,
    loss_and_grads,
    numerical_gradient,
    run_cell,
    run_cell_backward,
)
from melodyclf.notes import Note, NoteSequence
from melodyclf.pianoroll import encode_pianoroll
from melodyclf.smf import SmfError, parse_smf, write_smf


@contextmanager
def criterion(n: int, title: str, budget_s: float):
    """Time the block, record a PASS/FAIL line, and fail on overrun."""
    detail: dict = {}
    t0 = time.perf_counter()
    ok = False
    try:
        yield detail
        ok = True
    finally:
        dt = time.perf_counter() - t0
        within = dt <= budget_s
        verdict = "PASS" if ok and within else "FAIL"
        extra = f" [{detail['note']}]" if "note" in detail else ""
        line = f"{verdict} criterion {n:2d}: {title}{extra} ({dt:.1f}s / budget {budget_s:g}s)"
        conftest.ACCEPTANCE[n] = line
        print(line)
    assert within, f"criterion {n} ran {dt:.1f}s, budget {budget_s}s"


def _corpus(n=1000, seed=2024):
    rng = np.random.default_rng(seed)
    return [random_monophonic(rng, min_dur=0.01) for _ in range(n)]


def test_criterion_01_vocabulary_law():
    expected = dict(zip(DEFAULT_STEPS, (278, 228, 198, 188, 183, 180, 179)))
    with criterion(1, "vocabulary size for all seven step settings", 1.0) as d:
        for steps, want in expected.items():
            cfg = PerformanceConfig(21, 108, steps, 0)
            table = {id_to_event(i, cfg) for i in range(vocab_size(cfg))}
            assert len(table) == vocab_size(cfg) == want
            assert all(event_to_id(e, cfg) < want for e in table)
        d["note"] = ", ".join(f"{s}:{v}" for s, v in expected.items())


def test_criterion_02_codec_round_trip():
    cfg = PerformanceConfig(21, 108, 100, 0)
    corpus = _corpus()
    with criterion(2, "steps=100 round trip within 5 ms, pitches exact", 10.0) as d:
        worst = 0.0
        for s in corpus:
            back = decode_events(encode_events(s, cfg), cfg)
            assert [n.pitch for n in back] == [n.pitch for n in s]
            for a, b in zip(s, back):
                worst = max(worst, abs(a.onset - b.onset), abs(a.offset - b.offset))
        assert worst <= 0.005 + 1e-9
        d["note"] = f"worst error {worst * 1e3:.3f} ms over {len(corpus)} sequences"


def test_criterion_03_coarse_quantization():
    cfg = PerformanceConfig(21, 108, 1, 0)
    corpus = _corpus()
    with criterion(3, "steps=1 decodes to integer seconds", 10.0) as d:
        count = 0
        for s in corpus:
            for n in decode_events(encode_events(s, cfg), cfg):
                assert n.onset == int(n.onset) and n.offset == int(n.offset)
                count += 2
        d["note"] = f"{count} boundaries checked"


def test_criterion_04_pianoroll_ambiguity():
    rng = np.random.default_rng(4)
    corpus = [random_monophonic(rng, min_dur=0.01) for _ in range(200)]
    with criterion(4, "splitting a note leaves the piano roll unchanged", 5.0) as d:
        for s in corpus:
            i = int(rng.integers(len(s.notes)))
            n = s.notes[i]
            cut = n.onset + float(rng.uniform(0.01, 0.99)) * (n.offset - n.onset)
            parts = (Note(n.pitch, n.onset, cut), Note(n.pitch, cut, n.offset))
            split = NoteSequence(s.notes[:i] + parts + s.notes[i + 1:])
            col_fs = int(rng.integers(1, 33))
            assert encode_pianoroll(split, col_fs) == encode_pianoroll(s, col_fs)
        d["note"] = "200 sequences"


def _rel_err(ana, num):
    return float((np.abs(ana - num) / np.maximum(np.maximum(np.abs(ana), np.abs(num)), 1e-6)).max())


def test_criterion_05_gradient_suite():
    rng = np.random.default_rng(5)
    with criterion(5, "analytic gradients match finite differences", 120.0) as d:
        worst = {}
        # cells
        for kind in CellKind:
            p = {k: rng.uniform(-0.6, 0.6, s) for k, s in cell_param_shapes(kind, 4, 5).items()}
            xs = rng.normal(size=(2, 6, 4))
            mask = np.ones((2, 6), dtype=bool)
            mask[1, 4:] = False
            w = rng.normal(size=(2, 5))
            f = lambda: float((run_cell(kind, xs, mask, p)[0] * w).sum())  # noqa: E731
            _, cache = run_cell(kind, xs, mask, p)
            dxs, g = run_cell_backward(w, cache, p)
            worst[kind.value] = max(_rel_err(g[k], numerical_gradient(f, p[k])) for k in p)
        # embedding
        table = rng.normal(size=(5, 4))
        ids = np.array([3, 1, 3, 0])
        up = rng.normal(size=(4, 4))
        num = numerical_gradient(lambda: float((embedding_forward(ids, table) * up).sum()), table)
        worst["embedding"] = _rel_err(embedding_backward(ids, up, 5), num)
        # full model; the dense head is part of it and reported separately
        for kind in CellKind:
            spec = ModelSpec(vocab=20, cell=kind, embed_dim=6, hidden=8, dense_hidden=5,
                             input_dropout=0, latent_dropout=0)
            params = init_params(spec, np.random.default_rng(3), scale=0.5, dtype=np.float64)
            for k, v in params.items():
                if k.endswith(("b", "b1")):
                    v[:] = rng.normal(size=v.shape) * 0.2
            ids = rng.integers(2, 20, size=(3, 12))
            ids[1, 9:] = 0
            y = np.array([1.0, 0.0, 1.0])
            _, _, grads = loss_and_grads(spec, params, ids, y)
            errs = {
                k: _rel_err(grads[k], numerical_gradient(lambda: loss_and_grads(spec, params, ids, y)[0], v))
                for k, v in params.items()
            }
            worst["head"] = max(worst.get("head", 0.0), *(errs[k] for k in ("W1", "b1", "w2", "b2")))
            worst[f"model/{kind.value}"] = max(errs.values())
        assert max(worst.values()) <= 1e-3, worst
        d["note"] = "max rel err " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items())


def test_criterion_06_auc_oracle():
    rng = np.random.default_rng(6)
    with criterion(6, "AUC equals brute-force pair count", 5.0) as d:
        for _ in range(100):
            n = int(rng.integers(2, 201))
            labels = rng.integers(0, 2, n)
            labels[:2] = [0, 1]
            scores = rng.integers(0, 10, n) / 10  # coarse values force ties
            pos, neg = scores[labels == 1], scores[labels == 0]
            brute = ((pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()) / (
                len(pos) * len(neg)
            )
            assert auc(scores, labels) == pytest.approx(brute, abs=1e-12)
        d["note"] = "100 instances"


def _epoch10(task, steps):
    cfg = TrainConfig(epochs=10, checkpoint_epoch=10, seed=0)
    entries = sweep(generate(task), steps, cfg)
    return {e.steps_per_second: e.val_auc for e in entries}


@pytest.mark.slow
def test_criterion_07_pitch_task():
    with criterion(7, "pitch task, BiGRU, steps=100, epoch-10 val AUC >= 0.95", 15 * 60) as d:
        res = _epoch10(pitch_task(1000, seed=0), [100])
        d["note"] = f"AUC {res[100]:.4f}"
        assert res[100] >= 0.95


@pytest.mark.slow
def test_criterion_08_timing_trend():
    with criterion(8, "timing task, AUC(100) - AUC(1) >= 0.2 and AUC(1) <= 0.65", 30 * 60) as d:
        res = _epoch10(timing_task(1000, seed=0), [100, 1])
        d["note"] = f"AUC(100) {res[100]:.4f}, AUC(1) {res[1]:.4f}"
        assert res[100] - res[1] >= 0.2
        assert res[1] <= 0.65


@pytest.mark.slow
def test_criterion_09_sweep_determinism(tmp_path):
    data = tmp_path / "data"
    assert cli.run(["synth-data", "--task", "pitch", "--n", "1000", "--seed", "0", "--out", str(data)]) == 0
    with criterion(9, "two sweeps with one seed are byte-identical", 30 * 60) as d:
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            rc = cli.run(["sweep", "--data", str(data), "--labels", str(data / "labels.csv"), "--steps", "100",
                          "--seed", "7", "--epochs", "10", "--out", str(out)])
            assert rc == 0
            outs.append(out)
        files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*") if p.is_file())
        assert files == sorted(p.relative_to(outs[1]) for p in outs[1].rglob("*") if p.is_file())
        assert any(f.name == "metrics.csv" for f in files) and any(f.name == "weights.bin" for f in files)
        for f in files:
            assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes(), f
        d["note"] = f"{len(files)} files compared"


_XML_SEED = (
    '<?xml version="1.0"?><score-partwise version="3.1"><part-list><score-part id="P1"/></part-list>'
    '<part id="P1"><measure number="1"><attributes><divisions>2</divisions></attributes>'
    '<direction><sound tempo="96"/></direction>'
    "<note><pitch><step>C</step><octave>4</octave></pitch><duration>2</duration><tie type=\"start\"/></note>"
    "<note><chord/><pitch><step>E</step><alter>-1</alter><octave>4</octave></pitch><duration>2</duration></note>"
    "<note><rest/><duration>2</duration></note>"
    "<backup><duration>4</duration></backup>"
    "<note><pitch><step>G</step><octave>3</octave></pitch><duration>4</duration><voice>2</voice></note>"
    "<forward><duration>2</duration></forward>"
    '</measure><measure number="2">'
    "<note><grace/><pitch><step>D</step><octave>5</octave></pitch></note>"
    "<note><pitch><step>C</step><octave>4</octave></pitch><duration>8</duration><tie type=\"stop\"/></note>"
    "</measure></part></score-partwise>"
).encode()

_XML_TOKENS = [b"<", b">", b"/", b"<note>", b"</note>", b"<duration>", b"-1", b"1e308", b"nan", b"0",
               b"<chord/>", b"<backup><duration>9</duration></backup>", b"<divisions>0</divisions>", b"&", b"\x00"]


def _mutate(buf: bytes, rng, tokens=()) -> bytes:
    b = bytearray(buf)
    for _ in range(int(rng.integers(1, 8))):
        op = int(rng.integers(5 if tokens else 4))
        pos = int(rng.integers(len(b) + 1))
        if op == 0 and b:
            b[min(pos, len(b) - 1)] = int(rng.integers(256))
        elif op == 1:
            b[pos:pos] = bytes(rng.integers(0, 256, int(rng.integers(1, 5))).tolist())
        elif op == 2 and b:
            del b[pos : pos + int(rng.integers(1, 16))]
        elif op == 3 and b:
            start = int(rng.integers(len(b)))
            b[pos:pos] = b[start : start + int(rng.integers(1, 40))]
        elif op == 4:
            b[pos:pos] = tokens[int(rng.integers(len(tokens)))]
    return bytes(b)


_XML_VALUES = ["0", "-3", "2.5", "1e309", "nan", "x", "", "127", "H", "-1", "99999999"]


def _mutate_tree(buf: bytes, rng) -> bytes:
    """Well-formed mutations: edit texts and attributes, drop or clone elements."""
    import copy
    import xml.etree.ElementTree as ET

    root = ET.fromstring(buf)
    for _ in range(int(rng.integers(1, 5))):
        nodes = list(root.iter())
        el = nodes[int(rng.integers(len(nodes)))]
        op = int(rng.integers(4))
        if op == 0:
            el.text = _XML_VALUES[int(rng.integers(len(_XML_VALUES)))]
        elif op == 1 and el.attrib:
            key = list(el.attrib)[int(rng.integers(len(el.attrib)))]
            el.set(key, _XML_VALUES[int(rng.integers(len(_XML_VALUES)))])
        elif op == 2 and len(el):
            el.remove(el[int(rng.integers(len(el)))])
        elif op == 3 and len(el):
            el.insert(int(rng.integers(len(el) + 1)), copy.deepcopy(el[int(rng.integers(len(el)))]))
    return ET.tostring(root)


def test_criterion_10_parser_robustness():
    rng = np.random.default_rng(10)
    smf_seeds = [write_smf(random_monophonic(rng, n_max=8)) for _ in range(5)]
    with criterion(10, "10,000 fuzzed inputs per parser raise only structured errors", 120.0) as d:
        stats = {"smf_ok": 0, "smf_err": 0, "xml_ok": 0, "xml_err": 0}
        for i in range(10_000):
            if i % 10 == 0:
                data = bytes(rng.integers(0, 256, int(rng.integers(0, 64))).tolist())
                if i % 20 == 0:
                    data = b"MThd" + data
            elif i % 2:
                # flip bytes past the 22-byte header region so chunk lengths survive
                b = bytearray(smf_seeds[i % 5])
                for _ in range(int(rng.integers(1, 4))):
                    b[int(rng.integers(22, len(b)))] = int(rng.integers(256))
                data = bytes(b)
            else:
                data = _mutate(smf_seeds[i % 5], rng)
            try:
                parse_smf(data)
                stats["smf_ok"] += 1
            except SmfError:
                stats["smf_err"] += 1
        for i in range(10_000):
            if i % 10 == 0:
                data = bytes(rng.integers(0, 256, int(rng.integers(0, 64))).tolist())
            elif i % 2:
                data = _mutate_tree(_XML_SEED, rng)
            else:
                data = _mutate(_XML_SEED, rng, _XML_TOKENS)
            try:
                ingest_musicxml(data)
                stats["xml_ok"] += 1
            except MusicXmlError:
                stats["xml_err"] += 1
        d["note"] = ", ".join(f"{k} {v}" for k, v in stats.items())
