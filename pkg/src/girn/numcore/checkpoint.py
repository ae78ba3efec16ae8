"""Flat binary parameter container.

Layout (all integers little-endian)::

    magic   8 bytes  b"GIRNCKPT"
    version u32
    count   u64      number of blocks
    per block:
        name_len u32, name (utf-8), rank u32,
        dims     rank x i64,
        values   prod(dims) x f64
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"GIRNCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(params: dict) -> bytes:
    parts = [MAGIC, struct.pack("<IQ", VERSION, len(params))]
    for name, value in params.items():
        arr = np.asarray(value, dtype="<f8")  # tobytes() is C-order
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> dict:
    if blob[:8] != MAGIC:
        raise CheckpointError("not a parameter checkpoint (bad magic)")
    pos = 8
    version, count = struct.unpack_from("<IQ", blob, pos)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos += 12
    out = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}q", blob, pos)
            pos += 8 * rank
            size = int(np.prod(dims, dtype=np.int64)) if rank else 1
            values = np.frombuffer(blob, dtype="<f8", count=size, offset=pos)
            pos += 8 * size
            out[name] = values.reshape(dims).astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    if pos != len(blob):
        raise CheckpointError("trailing bytes after last block")
    return out


def save_checkpoint(path, params: dict) -> None:
    Path(path).write_bytes(dumps(params))


def load_checkpoint(path) -> dict:
    return loads(Path(path).read_bytes())
