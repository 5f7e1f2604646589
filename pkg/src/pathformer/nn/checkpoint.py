"""PFCK checkpoint container.

Layout (all integers little-endian)::

    b"PFCK"  u32 version
    u32 metadata length, metadata as UTF-8 JSON
    repeated until EOF:
        u32 name length, UTF-8 name, u32 rank, rank x u64 dims,
        prod(dims) x f32 values

Optimizer moments are stored under ``opt/m/<name>`` and ``opt/v/<name>``,
the Adam step counter as the rank-0 record ``opt/step``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .params import ParameterStore

MAGIC = b"PFCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _write_record(fh, name: str, array: np.ndarray) -> None:
    raw = name.encode("utf-8")
    array = np.asarray(array, dtype="<f4")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<I", array.ndim))
    for dim in array.shape:
        fh.write(struct.pack("<Q", dim))
    fh.write(np.ascontiguousarray(array).tobytes())


def save_checkpoint(path, store: ParameterStore, metadata: dict, include_optimizer: bool = True) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    meta = json.dumps(metadata, sort_keys=True).encode("utf-8")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)
        for name, value in store.params.items():
            _write_record(fh, name, value)
        if include_optimizer:
            _write_record(fh, "opt/step", np.array(store.step))
            for name in store.m:
                _write_record(fh, f"opt/m/{name}", store.m[name])
                _write_record(fh, f"opt/v/{name}", store.v[name])
    tmp.replace(path)


def _read_exact(fh, n):
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint")
    return data


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Return ``(metadata, records)`` with records as float32 arrays in file order."""
    records: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError(f"{path}: not a PFCK checkpoint")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        (meta_len,) = struct.unpack("<I", _read_exact(fh, 4))
        metadata = json.loads(_read_exact(fh, meta_len).decode("utf-8"))
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise CheckpointError("truncated checkpoint")
            (name_len,) = struct.unpack("<I", head)
            name = _read_exact(fh, name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4))
            dims = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank)) if rank else ()
            count = int(np.prod(dims)) if rank else 1
            values = np.frombuffer(_read_exact(fh, 4 * count), dtype="<f4").reshape(dims)
            records[name] = values.copy()
    return metadata, records


def load_into(store: ParameterStore, records: dict[str, np.ndarray]) -> None:
    """Copy stored parameters (and optimizer state, if present) into ``store``."""
    for name in store.names():
        if name not in records:
            raise CheckpointError(f"checkpoint is missing parameter {name!r}")
        store.set(name, records[name])
    if "opt/step" in records:
        store.step = int(records["opt/step"])
        for name in store.names():
            if f"opt/m/{name}" in records:
                store.m[name] = records[f"opt/m/{name}"].astype(store.dtype)
                store.v[name] = records[f"opt/v/{name}"].astype(store.dtype)
