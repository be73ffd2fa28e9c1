"""Command-line entry point: ``melodyclf <subcommand> ...``.

Exit status is 0 on success, 1 on usage errors and 2 on data errors.
Directory outputs are assembled in a temporary sibling and renamed into
place, file outputs are written atomically, so a failed run leaves nothing
half-written behind.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import shutil
import sys
import tempfile
from pathlib import Path

from . import classifier as clf
from .checkpoint import Checkpoint, CheckpointError, atomic_write
from .dataset import LabeledSequence, generate, labels_csv, pitch_task, read_labels_csv, timing_task
from .events import (
    EncodedSample,
    EventCodecError,
    PerformanceConfig,
    decode_events,
    dumps_jsonl,
    read_jsonl,
)
from .musicxml import MusicXmlError, ingest_musicxml
from .nn import CellKind
from .notes import NoteSequence
from .pianoroll import NotMonophonic, encode_pianoroll
from .smf import SmfError, parse_smf, write_smf

log = logging.getLogger("melodyclf")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


@contextlib.contextmanager
def _staged_dir(out: Path):
    """Yield a scratch directory that replaces ``out`` only if the block succeeds."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=out.parent, prefix=f".{out.name}.", suffix=".tmp"))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if out.exists():
        shutil.rmtree(out)
    tmp.rename(out)


def _steps_list(text: str) -> list[int]:
    try:
        steps = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not steps or any(s < 1 for s in steps):
        raise argparse.ArgumentTypeError("step list must be non-empty positive integers")
    return steps


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _read_dir(path: Path, suffixes: tuple[str, ...]) -> list[Path]:
    if not path.is_dir():
        raise DataError(f"{path} is not a directory")
    return sorted(p for p in path.iterdir() if p.suffix.lower() in suffixes)


def _load_midi_dir(path: Path) -> list[tuple[str, NoteSequence]]:
    out = []
    for f in _read_dir(path, (".mid", ".midi")):
        try:
            out.append((f.stem, parse_smf(f.read_bytes(), f.stem)))
        except SmfError as exc:
            log.warning("skipping %s: %s", f.name, exc)
    return out


def _load_labels(path: Path) -> dict[str, int]:
    try:
        return read_labels_csv(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read labels {path}: {exc}") from exc


def _labeled(seqs: list[tuple[str, NoteSequence]], labels: dict[str, int]) -> list[LabeledSequence]:
    out = []
    for sid, seq in seqs:
        if sid not in labels:
            log.warning("skipping %s: no label", sid)
            continue
        out.append(LabeledSequence(sid, labels[sid], seq))
    if not out:
        raise DataError("no labeled samples")
    return out


def _perf(args, steps: int) -> PerformanceConfig:
    return PerformanceConfig(args.min_pitch, args.max_pitch, steps, 0)


def _in_range(items: list[LabeledSequence], perf: PerformanceConfig) -> list[LabeledSequence]:
    kept = []
    for it in items:
        bad = [n.pitch for n in it.seq if not perf.min_pitch <= n.pitch <= perf.max_pitch]
        if bad:
            log.warning("skipping %s: pitch %d outside [%d, %d]", it.id, bad[0], perf.min_pitch, perf.max_pitch)
        else:
            kept.append(it)
    return kept


def _train_config(args, steps: int) -> clf.TrainConfig:
    try:
        return clf.TrainConfig(
            steps_per_second=steps,
            cell=CellKind(args.cell),
            bidirectional=not args.unidirectional,
            max_len=args.max_len,
            epochs=args.epochs,
            lr=args.lr,
            batch_size=args.batch_size,
            seed=args.seed,
            checkpoint_epoch=args.checkpoint_epoch,
            min_pitch=args.min_pitch,
            max_pitch=args.max_pitch,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


# -- subcommands -------------------------------------------------------------

def cmd_ingest_musicxml(args) -> None:
    files = _read_dir(args.inp, (".xml", ".musicxml", ".mxl"))
    with _staged_dir(args.out) as tmp:
        written = 0
        for f in files:
            try:
                seq = ingest_musicxml(f.read_bytes(), args.bars, f.stem)
                (tmp / f"{f.stem}.mid").write_bytes(write_smf(seq))
                written += 1
            except (MusicXmlError, SmfError) as exc:
                log.warning("skipping %s: %s", f.name, exc)
    log.info("wrote %d of %d files to %s", written, len(files), args.out)


def cmd_midi2events(args) -> None:
    perf = _perf(args, args.steps)
    items = _in_range(_labeled(_load_midi_dir(args.inp), _load_labels(args.labels)), perf)
    samples = clf.encode_labeled(items, perf)
    atomic_write(args.out, dumps_jsonl(samples))
    log.info("encoded %d samples, vocabulary %d", len(samples), perf.vocab_size)


def cmd_events2midi(args) -> None:
    samples = _read_samples(args.inp)
    with _staged_dir(args.out) as tmp:
        for s in samples:
            perf = _perf(args, s.steps_per_second)
            try:
                seq = decode_events(s.events, perf, s.id)
            except EventCodecError as exc:
                raise DataError(f"sample {s.id}: {exc}") from exc
            (tmp / f"{s.id}.mid").write_bytes(write_smf(seq))


def cmd_pianoroll(args) -> None:
    lines = []
    for sid, seq in _load_midi_dir(args.inp):
        try:
            lines.append(encode_pianoroll(seq, args.col_fs).to_line())
        except NotMonophonic as exc:
            raise DataError(f"{sid}: {exc}") from exc
    atomic_write(args.out, "".join(line + "\n" for line in lines))


def cmd_synth_data(args) -> None:
    make = pitch_task if args.task == "pitch" else timing_task
    items = generate(make(args.n, args.seed))
    with _staged_dir(args.out) as tmp:
        for it in items:
            (tmp / f"{it.id}.mid").write_bytes(write_smf(it.seq))
        (tmp / "labels.csv").write_text(labels_csv(items), encoding="utf-8")


def _read_samples(path: Path) -> list[EncodedSample]:
    try:
        return read_jsonl(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def cmd_train(args) -> None:
    data = _read_samples(args.data)
    if not data:
        raise DataError("empty dataset")
    steps = {s.steps_per_second for s in data}
    if len(steps) != 1:
        raise DataError(f"mixed steps_per_second in dataset: {sorted(steps)}")
    cfg = _train_config(args, steps.pop())
    with _staged_dir(args.out) as tmp:
        clf.train(data, cfg, tmp)


def cmd_predict(args) -> None:
    try:
        ck = Checkpoint.load(args.checkpoint)
    except CheckpointError as exc:
        raise DataError(str(exc)) from exc
    data = _read_samples(args.data)
    scores = clf.predict(ck, data)
    atomic_write(args.out, clf.predictions_jsonl((s.id, x) for s, x in zip(data, scores)))


def cmd_eval_auc(args) -> None:
    import json

    labels = _load_labels(args.labels)
    scores, ys = [], []
    try:
        with open(args.predictions, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    if rec["id"] in labels:
                        scores.append(float(rec["score"]))
                        ys.append(labels[rec["id"]])
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot read predictions {args.predictions}: {exc}") from exc
    print(f"{clf.auc(scores, ys):.6f}")


def cmd_sweep(args) -> None:
    labels = _load_labels(args.labels)
    perf = _perf(args, 1)
    source = _in_range(_labeled(_load_midi_dir(args.data), labels), perf)
    predict_on = None
    if args.predict is not None:
        predict_on = [LabeledSequence(sid, 0, seq) for sid, seq in _load_midi_dir(args.predict)]
        predict_on = _in_range(predict_on, perf)
    base = _train_config(args, args.steps[0])
    with _staged_dir(args.out) as tmp:
        results = clf.sweep(source, args.steps, base, tmp, predict_on)
    for e in results:
        print(f"steps={e.steps_per_second} epoch={e.checkpoint_epoch} val_auc={e.val_auc:.4f}")


# -- parser ------------------------------------------------------------------

def _add_pitch_range(p):
    p.add_argument("--min-pitch", type=int, default=21)
    p.add_argument("--max-pitch", type=int, default=108)


def _add_training(p, epochs_default=50):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=_positive, default=epochs_default)
    p.add_argument("--checkpoint-epoch", type=_positive, default=10)
    p.add_argument("--cell", choices=[c.value for c in CellKind], default="GRU")
    p.add_argument("--unidirectional", action="store_true")
    p.add_argument("--batch-size", type=_positive, default=32)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--max-len", type=_positive, default=200)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    parser = _Parser(
        prog="melodyclf",
        description="Melody classification from performance-event sequences.",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, **kw):
        return sub.add_parser(name, parents=[common], **kw)

    p = add("ingest-musicxml", help="MusicXML lead sheets -> melody-only MIDI files")
    p.add_argument("--in", dest="inp", type=Path, required=True)
    p.add_argument("--bars", type=_positive, default=16)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_ingest_musicxml)

    p = add("midi2events", help="MIDI directory + labels -> event JSONL")
    p.add_argument("--in", dest="inp", type=Path, required=True)
    p.add_argument("--labels", type=Path, required=True)
    p.add_argument("--steps", type=_positive, default=100)
    p.add_argument("--out", type=Path, required=True)
    _add_pitch_range(p)
    p.set_defaults(func=cmd_midi2events)

    p = add("events2midi", help="event JSONL -> decoded MIDI files")
    p.add_argument("--in", dest="inp", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_pitch_range(p)
    p.set_defaults(func=cmd_events2midi)

    p = add("pianoroll", help="MIDI directory -> one comma-separated frame line per file")
    p.add_argument("--in", dest="inp", type=Path, required=True)
    p.add_argument("--col-fs", type=_positive, default=8)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_pianoroll)

    p = add("synth-data", help="write a synthetic labeled MIDI dataset")
    p.add_argument("--task", choices=["pitch", "timing"], default="pitch")
    p.add_argument("--n", type=_positive, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_synth_data)

    p = add("train", help="train on an event JSONL file")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_training(p)
    _add_pitch_range(p)
    p.set_defaults(func=cmd_train)

    p = add("predict", help="score an event JSONL file with a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_predict)

    p = add("eval-auc", help="AUC of a predictions JSONL against a labels CSV")
    p.add_argument("--predictions", type=Path, required=True)
    p.add_argument("--labels", type=Path, required=True)
    p.set_defaults(func=cmd_eval_auc)

    p = add("sweep", help="train one model per steps_per_second value")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--labels", type=Path, required=True)
    p.add_argument("--steps", type=_steps_list, default=list(clf.DEFAULT_STEPS))
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--predict", type=Path, default=None, help="MIDI directory to score (default: validation split)")
    _add_training(p)
    _add_pitch_range(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except UsageError as exc:
        print(f"melodyclf {args.command}: {exc}", file=sys.stderr)
        return 1
    except (DataError, ValueError, OSError) as exc:
        print(f"melodyclf {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
