"""Training, scoring, AUC and the steps_per_second sweep."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .checkpoint import Checkpoint, atomic_write
from .dataset import LabeledSequence, SingleClassData, split
from .events import EncodedSample, PerformanceConfig, encode_events, prepare_sequence, vocab_size
from .nn import AdamState, CellKind, ModelSpec, adam_step, bce_loss, forward, init_params, loss_and_grads

log = logging.getLogger(__name__)

DEFAULT_STEPS = (100, 50, 20, 10, 5, 2, 1)


class VocabMismatch(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    steps_per_second: int = 100
    cell: CellKind = CellKind.GRU
    bidirectional: bool = True
    max_len: int = 200
    epochs: int = 50
    lr: float = 1e-4
    val_split: float = 0.2
    batch_size: int = 32
    seed: int = 0
    checkpoint_epoch: int = 10
    embed_dim: int = 128
    hidden: int = 64
    dense_hidden: int = 32
    dropout: float = 0.2
    min_pitch: int = 21
    max_pitch: int = 108
    num_velocity_bins: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.val_split < 1:
            raise ValueError("val_split must be in (0, 1)")
        if self.checkpoint_epoch < 1 or self.epochs < self.checkpoint_epoch:
            raise ValueError(
                f"need 1 <= checkpoint_epoch <= epochs, got {self.checkpoint_epoch} / {self.epochs}"
            )
        if self.batch_size < 1 or self.max_len < 1:
            raise ValueError("batch_size and max_len must be >= 1")
        object.__setattr__(self, "cell", CellKind(self.cell))

    @property
    def perf(self) -> PerformanceConfig:
        return PerformanceConfig(self.min_pitch, self.max_pitch, self.steps_per_second, self.num_velocity_bins)

    @property
    def model(self) -> ModelSpec:
        return ModelSpec(
            vocab=vocab_size(self.perf),
            cell=self.cell,
            bidirectional=self.bidirectional,
            embed_dim=self.embed_dim,
            hidden=self.hidden,
            dense_hidden=self.dense_hidden,
            input_dropout=self.dropout,
            latent_dropout=self.dropout,
        )


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_auc: float
    val_loss: float
    val_auc: float


@dataclass
class TrainRun:
    config: TrainConfig
    records: list[EpochRecord] = field(default_factory=list)
    checkpoints: list[Checkpoint] = field(default_factory=list)
    checkpoint_dirs: list[Path] = field(default_factory=list)
    train_ids: list[str] = field(default_factory=list)
    val_ids: list[str] = field(default_factory=list)

    def checkpoint(self, epoch: int) -> Checkpoint:
        ck = self.checkpoints[epoch - 1]
        assert ck.epoch == epoch
        return ck

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "train_auc", "val_loss", "val_auc"])
        for r in self.records:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.train_auc), repr(r.val_loss), repr(r.val_auc)])
        return buf.getvalue()


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """ROC AUC as the Mann-Whitney statistic; tied pairs count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassData("AUC needs both classes")
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def _check_vocab(samples: Iterable[EncodedSample], perf: PerformanceConfig) -> None:
    V = vocab_size(perf)
    for s in samples:
        if s.steps_per_second != perf.steps_per_second:
            raise VocabMismatch(
                f"sample {s.id} encoded at {s.steps_per_second} steps/s, model expects {perf.steps_per_second}"
            )
        if not s.events:
            raise ValueError(f"sample {s.id} has no events")
        if min(s.events) < 0 or max(s.events) >= V:
            raise VocabMismatch(f"sample {s.id} has ids outside [0, {V})")


def _batch_scores(model: ModelSpec, params: dict, X: np.ndarray, batch_size: int) -> np.ndarray:
    out = [forward(model, params, X[i : i + batch_size])[0] for i in range(0, len(X), batch_size)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.float32)


def train(data: Sequence[EncodedSample], cfg: TrainConfig, out_dir: str | Path | None = None) -> TrainRun:
    """Fit the recurrent classifier; one record and one checkpoint per epoch.

    With ``out_dir`` set, checkpoints go to ``out_dir/checkpoints/epoch_NNN``
    and the metrics table to ``out_dir/metrics.csv`` as training proceeds.
    """
    if not data:
        raise ValueError("no training data")
    if len({s.label for s in data}) < 2:
        raise SingleClassData("training data needs both labels")
    perf = cfg.perf
    _check_vocab(data, perf)
    model = cfg.model

    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    init_rng, shuffle_rng, dropout_rng = (np.random.default_rng(s) for s in seeds)
    train_set, val_set = split(list(data), cfg.val_split, cfg.seed)

    X_tr = np.stack([prepare_sequence(s.events, cfg.max_len) for s in train_set])
    y_tr = np.array([s.label for s in train_set], dtype=np.float32)
    X_va = np.stack([prepare_sequence(s.events, cfg.max_len) for s in val_set])
    y_va = np.array([s.label for s in val_set], dtype=np.float32)

    params = init_params(model, init_rng)
    state = AdamState()
    run = TrainRun(cfg, train_ids=[s.id for s in train_set], val_ids=[s.id for s in val_set])
    out = Path(out_dir) if out_dir is not None else None

    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(len(X_tr))
        seen_scores, seen_labels, loss_sum = [], [], 0.0
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            loss, scores, grads = loss_and_grads(model, params, X_tr[idx], y_tr[idx], True, dropout_rng)
            adam_step(params, grads, state, cfg.lr)
            loss_sum += loss * len(idx)
            seen_scores.append(scores)
            seen_labels.append(y_tr[idx])
        tr_scores = np.concatenate(seen_scores)
        tr_labels = np.concatenate(seen_labels)

        va_scores = _batch_scores(model, params, X_va, cfg.batch_size)
        va_loss = float(bce_loss(va_scores, y_va)[0].mean())
        rec = EpochRecord(
            epoch,
            loss_sum / len(X_tr),
            auc(tr_scores, tr_labels),
            va_loss,
            auc(va_scores, y_va),
        )
        run.records.append(rec)
        ck = Checkpoint(epoch, model, perf, cfg.max_len, {k: v.copy() for k, v in params.items()})
        run.checkpoints.append(ck)
        log.info(
            "steps=%d epoch %d: train_loss=%.4f train_auc=%.4f val_loss=%.4f val_auc=%.4f",
            cfg.steps_per_second, epoch, rec.train_loss, rec.train_auc, rec.val_loss, rec.val_auc,
        )
        if out is not None:
            run.checkpoint_dirs.append(ck.save(out / "checkpoints" / f"epoch_{epoch:03d}"))
            atomic_write(out / "metrics.csv", run.metrics_csv())
    return run


def predict(checkpoint: Checkpoint, sequences: Sequence[EncodedSample | Sequence[int]],
            batch_size: int = 32) -> np.ndarray:
    """Eval-mode scores in [0, 1], one per input sequence."""
    V = checkpoint.model.vocab
    rows = []
    for s in sequences:
        if isinstance(s, EncodedSample):
            if s.steps_per_second != checkpoint.perf.steps_per_second:
                raise VocabMismatch(
                    f"sample {s.id} encoded at {s.steps_per_second} steps/s, "
                    f"checkpoint expects {checkpoint.perf.steps_per_second}"
                )
            ids = s.events
        else:
            ids = s
        ids = list(ids)
        if ids and (min(ids) < 0 or max(ids) >= V):
            raise VocabMismatch(f"ids outside the checkpoint vocabulary [0, {V})")
        rows.append(prepare_sequence(ids, checkpoint.max_len))
    if not rows:
        return np.zeros(0, dtype=np.float32)
    return _batch_scores(checkpoint.model, checkpoint.params, np.stack(rows), batch_size)


def encode_labeled(items: Sequence[LabeledSequence], perf: PerformanceConfig) -> list[EncodedSample]:
    return [
        EncodedSample(it.id, it.label, perf.steps_per_second, tuple(encode_events(it.seq, perf)))
        for it in items
    ]


@dataclass
class SweepEntry:
    steps_per_second: int
    run: TrainRun
    checkpoint_epoch: int
    val_auc: float
    predictions: list[tuple[str, float]]

    @property
    def checkpoint(self) -> Checkpoint:
        return self.run.checkpoint(self.checkpoint_epoch)


def predictions_jsonl(preds: Iterable[tuple[str, float]]) -> str:
    return "".join(json.dumps({"id": i, "score": float(s)}) + "\n" for i, s in preds)


def sweep(source: Sequence[LabeledSequence], steps: Sequence[int], base: TrainConfig,
          out_dir: str | Path | None = None,
          predict_on: Sequence[LabeledSequence] | None = None) -> list[SweepEntry]:
    """Re-encode ``source`` at each resolution, train, and score with the epoch-N checkpoint.

    Predictions cover ``predict_on`` when given, otherwise the validation
    split. Every entry uses ``base`` with only ``steps_per_second`` changed,
    so seeds and splits are shared across resolutions.
    """
    steps = list(steps)
    if not steps:
        raise ValueError("step list is empty")
    results = []
    for s in steps:
        cfg = replace(base, steps_per_second=int(s))
        data = encode_labeled(source, cfg.perf)
        sub = Path(out_dir) / f"steps_{s}" if out_dir is not None else None
        run = train(data, cfg, sub)
        ck = run.checkpoint(cfg.checkpoint_epoch)
        if predict_on is not None:
            targets = encode_labeled(predict_on, cfg.perf)
        else:
            val_ids = set(run.val_ids)
            targets = [d for d in data if d.id in val_ids]
        scores = predict(ck, targets, cfg.batch_size)
        preds = [(t.id, float(x)) for t, x in zip(targets, scores)]
        entry = SweepEntry(s, run, cfg.checkpoint_epoch, run.records[cfg.checkpoint_epoch - 1].val_auc, preds)
        results.append(entry)
        if sub is not None:
            atomic_write(sub / f"predictions_epoch{cfg.checkpoint_epoch:03d}.jsonl", predictions_jsonl(preds))
    if out_dir is not None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["steps_per_second", "checkpoint_epoch", "val_auc"])
        for e in results:
            w.writerow([e.steps_per_second, e.checkpoint_epoch, repr(e.val_auc)])
        atomic_write(Path(out_dir) / "summary.csv", buf.getvalue())
    return results
