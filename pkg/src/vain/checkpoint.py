"""Versioned model checkpoints.

Byte layout (all integers little-endian)::

    offset  size  content
    0       8     magic b"VAINCKPT"
    8       4     uint32 format version (currently 1)
    12      8     uint64 header length H
    20      H     UTF-8 JSON header, keys sorted
    20+H    ...   arrays in header order, raw float64 little-endian, C order

The header holds ``spec`` (ModelSpec fields), ``seed``, ``arrays``
(a list of ``{"name", "shape"}``), ``target_scale`` (list or null) and a
free-form ``extra`` dict.  Nothing time- or host-dependent is written, so
the same model state always gives the same bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .models import Model, ModelSpec

MAGIC = b"VAINCKPT"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    """Unreadable or incompatible checkpoint file."""


def to_bytes(model: Model, target_scale=None, extra: dict | None = None) -> bytes:
    named = model.state_arrays()
    header = {
        "spec": model.spec.to_dict(),
        "seed": model.spec.seed,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in named],
        "target_scale": None if target_scale is None else [float(x) for x in target_scale],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [_PREFIX.pack(MAGIC, VERSION, len(blob)), blob]
    parts += [np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in named]
    return b"".join(parts)


def save(path: str | Path, model: Model, target_scale=None, extra: dict | None = None) -> None:
    Path(path).write_bytes(to_bytes(model, target_scale, extra))


def from_bytes(data: bytes) -> tuple[Model, dict]:
    if len(data) < _PREFIX.size:
        raise CheckpointError("file too short")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError("not a VAIN checkpoint")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = _PREFIX.size
    header = json.loads(data[start:start + hlen].decode("utf-8"))
    model = Model(ModelSpec.from_dict(header["spec"]))
    expected = [(n, tuple(a.shape)) for n, a in model.state_arrays()]
    stored = [(a["name"], tuple(a["shape"])) for a in header["arrays"]]
    if expected != stored:
        raise CheckpointError("array layout does not match the model spec")
    offset = start + hlen
    arrays = []
    for _, shape in stored:
        n = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * n
        if end > len(data):
            raise CheckpointError("truncated array data")
        arrays.append(np.frombuffer(data, dtype="<f8", count=n, offset=offset).reshape(shape))
        offset = end
    if offset != len(data):
        raise CheckpointError("trailing bytes after array data")
    model.load_state([a.astype(np.float64) for a in arrays])
    model.eval()
    return model, header


def load(path: str | Path) -> tuple[Model, dict]:
    return from_bytes(Path(path).read_bytes())
