"""Self-describing checkpoint container.

A checkpoint is a directory holding ``manifest.txt`` (``key = value`` lines)
and ``weights.bin`` (little-endian float32 tensors concatenated in manifest
order). Tensor lines look like ``tensor fwd.W = 128x192 @ 98304``, where the
number after ``@`` is the byte offset into the blob.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .events import PerformanceConfig
from .nn import CellKind, ModelSpec

FORMAT = "melodyclf-checkpoint-v1"
MANIFEST = "manifest.txt"
BLOB = "weights.bin"


class CheckpointError(ValueError):
    pass


def atomic_write(path: str | Path, data: bytes | str) -> None:
    """Write via a sibling temp file and rename, so readers never see partial output."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class Checkpoint:
    epoch: int
    model: ModelSpec
    perf: PerformanceConfig
    max_len: int
    params: dict[str, np.ndarray]

    def manifest(self) -> tuple[str, bytes]:
        m, p = self.model, self.perf
        lines = [
            f"format = {FORMAT}",
            f"epoch = {self.epoch}",
            f"cell = {CellKind(m.cell).value}",
            f"bidirectional = {str(m.bidirectional).lower()}",
            f"vocab = {m.vocab}",
            f"embed_dim = {m.embed_dim}",
            f"hidden = {m.hidden}",
            f"dense_hidden = {m.dense_hidden}",
            f"input_dropout = {m.input_dropout!r}",
            f"latent_dropout = {m.latent_dropout!r}",
            f"min_pitch = {p.min_pitch}",
            f"max_pitch = {p.max_pitch}",
            f"steps_per_second = {p.steps_per_second}",
            f"num_velocity_bins = {p.num_velocity_bins}",
            f"max_len = {self.max_len}",
            f"blob = {BLOB}",
        ]
        chunks = []
        offset = 0
        for name, shape in m.param_shapes().items():
            arr = np.ascontiguousarray(self.params[name], dtype="<f4")
            if arr.shape != shape:
                raise CheckpointError(f"{name}: shape {arr.shape} != {shape}")
            lines.append(f"tensor {name} = {'x'.join(map(str, shape))} @ {offset}")
            raw = arr.tobytes()
            chunks.append(raw)
            offset += len(raw)
        return "\n".join(lines) + "\n", b"".join(chunks)

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        text, blob = self.manifest()
        atomic_write(directory / BLOB, blob)
        atomic_write(directory / MANIFEST, text)
        return directory

    @classmethod
    def load(cls, directory: str | Path) -> "Checkpoint":
        directory = Path(directory)
        try:
            text = (directory / MANIFEST).read_text(encoding="utf-8")
            blob = (directory / BLOB).read_bytes()
        except OSError as exc:
            raise CheckpointError(f"cannot read checkpoint at {directory}: {exc}") from exc
        meta: dict[str, str] = {}
        tensors: list[tuple[str, tuple[int, ...], int]] = []
        for line in text.splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise CheckpointError(f"bad manifest line: {line!r}")
            key, value = key.strip(), value.strip()
            if key.startswith("tensor "):
                shape_s, _, off_s = value.partition("@")
                shape = tuple(int(d) for d in shape_s.strip().split("x"))
                tensors.append((key[len("tensor "):].strip(), shape, int(off_s)))
            else:
                meta[key] = value
        if meta.get("format") != FORMAT:
            raise CheckpointError(f"unknown checkpoint format {meta.get('format')!r}")
        try:
            model = ModelSpec(
                vocab=int(meta["vocab"]),
                cell=CellKind(meta["cell"]),
                bidirectional=meta["bidirectional"] == "true",
                embed_dim=int(meta["embed_dim"]),
                hidden=int(meta["hidden"]),
                dense_hidden=int(meta["dense_hidden"]),
                input_dropout=float(meta["input_dropout"]),
                latent_dropout=float(meta["latent_dropout"]),
            )
            perf = PerformanceConfig(
                int(meta["min_pitch"]), int(meta["max_pitch"]),
                int(meta["steps_per_second"]), int(meta["num_velocity_bins"]),
            )
            epoch, max_len = int(meta["epoch"]), int(meta["max_len"])
        except (KeyError, ValueError) as exc:
            raise CheckpointError(f"incomplete manifest: {exc}") from exc
        expected = model.param_shapes()
        params = {}
        for name, shape, off in tensors:
            if expected.get(name) != shape:
                raise CheckpointError(f"tensor {name} has unexpected shape {shape}")
            n = int(np.prod(shape))
            if off < 0 or off + 4 * n > len(blob):
                raise CheckpointError(f"tensor {name} runs past the end of the blob")
            params[name] = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(shape).astype(np.float32)
        missing = set(expected) - set(params)
        if missing:
            raise CheckpointError(f"missing tensors: {sorted(missing)}")
        return cls(epoch, model, perf, max_len, {k: params[k] for k in expected})
