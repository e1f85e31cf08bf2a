"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"MLFW"                       magic
    uint32 version                currently 1
    uint32 header_len, header     UTF-8 JSON: {"arch": {...}, "meta": {...}}
    uint32 n_arrays
    per array, in parameter order:
        uint16 name_len, name     UTF-8
        uint8 ndim, uint32 * ndim shape
        float32 data              C order, little-endian
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np

from .nn import ArchDescriptor, ModelParams

MAGIC = b"MLFW"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(params: ModelParams, meta: dict | None = None) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    header = json.dumps({"arch": params.arch.to_dict(), "meta": meta or {}}, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(header)))
    buf.write(header)
    buf.write(struct.pack("<I", len(params.arrays)))
    for name, arr in params.items():
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def loads(data: bytes) -> tuple[ModelParams, dict]:
    view = memoryview(data)
    if bytes(view[:4]) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        vals = struct.unpack_from(fmt, view, pos)
        pos += size
        return vals

    (version,) = take("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (hlen,) = take("<I")
    header = json.loads(bytes(view[pos : pos + hlen]).decode())
    pos += hlen
    arch = ArchDescriptor.from_dict(header["arch"])
    (count,) = take("<I")
    arrays = {}
    for _ in range(count):
        (nlen,) = take("<H")
        name = bytes(view[pos : pos + nlen]).decode()
        pos += nlen
        (ndim,) = take("<B")
        shape = take(f"<{ndim}I") if ndim else ()
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(view, dtype="<f4", count=n, offset=pos).reshape(shape)
        pos += 4 * n
        arrays[name] = arr.astype(np.float32)
    if pos != len(data):
        raise CheckpointError("trailing bytes after last array")
    return ModelParams(arch, arrays), header.get("meta", {})


def save(path, params: ModelParams, meta: dict | None = None) -> str:
    """Write a checkpoint and return its sha256 hex digest."""
    data = dumps(params, meta)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load(path) -> tuple[ModelParams, dict]:
    return loads(Path(path).read_bytes())


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def diff(a: ModelParams, b: ModelParams) -> dict[str, float]:
    """Max absolute difference per array (arrays must share an architecture)."""
    if a.arch != b.arch:
        raise CheckpointError(f"architectures differ: {a.arch} vs {b.arch}")
    return {k: float(np.max(np.abs(a[k].astype(np.float64) - b[k].astype(np.float64)))) for k in a}
