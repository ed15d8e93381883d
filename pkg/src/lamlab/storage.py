"""Checkpoint container, columnar batch files and CSV export.

Container layout (all integers little-endian)::

    offset  size  field
    0       8     magic b"LAMLAB\\x00\\x01"
    8       4     u32 header length H
    12      H     UTF-8 JSON header
    12+H    ...   array payload, each array row-major float64 (<f8) or
                  int64 (<i8) / bool (|b1), at the offsets listed in the header
    end-4   4     u32 CRC32 of every preceding byte

The JSON header holds ``format_version``, ``kind`` (``linear_lam``,
``grid_model`` or ``batch``), free-form ``meta`` (dims, config, seed) and an
``arrays`` table of ``{name, dtype, shape, offset, nbytes}`` with offsets
relative to the start of the payload.
"""

from __future__ import annotations

import csv
import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .datagen import Batch
from .errors import CorruptFileError, VersionMismatchError
from .gridworld import GridBatch, GridModel, GridTrainConfig
from .linear_lam import LinearLamParams

__all__ = [
    "FORMAT_VERSION",
    "write_container",
    "read_container",
    "save_linear",
    "load_linear",
    "save_grid_model",
    "load_grid_model",
    "save_batch",
    "load_batch",
    "batch_to_csv",
    "grid_batch_columns",
]

MAGIC = b"LAMLAB\x00\x01"
FORMAT_VERSION = 1
_DTYPES = {"<f8": np.float64, "<i8": np.int64, "|b1": np.bool_}


def _canonical(a: np.ndarray) -> tuple[np.ndarray, str]:
    a = np.asarray(a)
    if a.dtype == np.bool_:
        return np.ascontiguousarray(a), "|b1"
    if np.issubdtype(a.dtype, np.integer):
        return np.ascontiguousarray(a, dtype="<i8"), "<i8"
    return np.ascontiguousarray(a, dtype="<f8"), "<f8"


def write_container(path: str | Path, kind: str, arrays: dict[str, np.ndarray], meta: dict | None = None) -> Path:
    path = Path(path)
    table, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        arr, dt = _canonical(arr)
        raw = arr.tobytes(order="C")
        table.append({"name": name, "dtype": dt, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "kind": kind, "meta": meta or {}, "arrays": table},
        sort_keys=True,
    ).encode("utf-8")
    body = MAGIC + struct.pack("<I", len(header)) + header + b"".join(chunks)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))
    return path


def read_container(path: str | Path, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    """Return ``(header, arrays)``; validates magic, CRC, version and kind."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < len(MAGIC) + 8 or data[: len(MAGIC)] != MAGIC:
        raise CorruptFileError(f"{path}: not a lamlab container (bad magic or too short)")
    body, crc = data[:-4], struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CorruptFileError(f"{path}: checksum mismatch (truncated or modified file)")
    (hlen,) = struct.unpack("<I", body[len(MAGIC): len(MAGIC) + 4])
    start = len(MAGIC) + 4
    try:
        header = json.loads(body[start: start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFileError(f"{path}: unreadable header") from exc
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, this build reads {FORMAT_VERSION}")
    if kind is not None and header.get("kind") != kind:
        raise CorruptFileError(f"{path}: expected a {kind!r} container, found {header.get('kind')!r}")
    payload = body[start + hlen:]
    arrays = {}
    for entry in header["arrays"]:
        lo, n = entry["offset"], entry["nbytes"]
        if lo + n > len(payload) or entry["dtype"] not in _DTYPES:
            raise CorruptFileError(f"{path}: array {entry['name']!r} out of bounds")
        arr = np.frombuffer(payload[lo: lo + n], dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return header, arrays


# ------------------------------------------------------------------ models

def save_linear(path, params: LinearLamParams, meta: dict | None = None) -> Path:
    meta = dict(meta or {})
    meta.setdefault("d_o", params.d_o)
    meta.setdefault("d_z", params.d_z)
    return write_container(path, "linear_lam", params.as_dict(), meta)


def load_linear(path) -> tuple[LinearLamParams, dict]:
    header, arrays = read_container(path, "linear_lam")
    return LinearLamParams(**arrays), header["meta"]


def save_grid_model(path, model: GridModel, meta: dict | None = None) -> Path:
    meta = dict(meta or {})
    meta["config"] = model.config.to_dict()
    return write_container(path, "grid_model", model.weights, meta)


def load_grid_model(path) -> tuple[GridModel, dict]:
    header, arrays = read_container(path, "grid_model")
    meta = header["meta"]
    return GridModel(weights=arrays, config=GridTrainConfig(**meta["config"])), meta


# ------------------------------------------------------------------ batches

def save_batch(path, batch: Batch | GridBatch, meta: dict | None = None) -> Path:
    if isinstance(batch, GridBatch):
        o, o_next = batch.flat()
        arrays = {"o": o, "a": batch.action, "onext": o_next, "random_branch": batch.random_branch}
    else:
        arrays = {"o": batch.o, "a": batch.a, "q": batch.q, "eps": batch.eps, "onext": batch.o_next, "label": batch.label}
    return write_container(path, "batch", arrays, meta)


def load_batch(path) -> Batch:
    _, arr = read_container(path, "batch")
    if "q" not in arr:
        raise CorruptFileError(f"{path}: grid batches load with read_container")
    return Batch(o=arr["o"], a=arr["a"], q=arr["q"], eps=arr["eps"], o_next=arr["onext"], label=arr["label"])


def _columns(prefix: str, m: np.ndarray) -> tuple[list[str], np.ndarray]:
    m = m.reshape(m.shape[0], -1)
    return [f"{prefix}_{i}" for i in range(m.shape[1])], m


def grid_batch_columns(batch: GridBatch):
    o, o_next = batch.flat()
    names, cols = [], []
    for prefix, m in (("o", o), ("a", batch.action[:, None]), ("onext", o_next)):
        n, c = _columns(prefix, m)
        names += n
        cols.append(c)
    return names, np.hstack(cols)


def batch_to_csv(path, batch: Batch | GridBatch) -> Path:
    """CSV with header ``o_0.., a_0.., eps_0.., onext_0.., label``.

    Floats use ``repr`` so the file reloads bit-for-bit.
    """
    path = Path(path)
    if isinstance(batch, GridBatch):
        names, values = grid_batch_columns(batch)
        names.append("label")
        label = np.zeros(batch.n, dtype=bool)
    else:
        names, blocks = [], []
        for prefix, m in (("o", batch.o), ("a", batch.a), ("eps", batch.eps), ("onext", batch.o_next)):
            n, c = _columns(prefix, m)
            names += n
            blocks.append(c)
        names.append("label")
        values, label = np.hstack(blocks), batch.label
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row, lab in zip(values, label):
            w.writerow([repr(float(v)) for v in row] + [int(lab)])
    return path
