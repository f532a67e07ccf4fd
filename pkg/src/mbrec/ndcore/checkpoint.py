"""Flat binary container of named float arrays.

Layout: the 8-byte magic ``MBRECKP1`` followed by records until end of file.
Each record is ``u64 name_len, name (utf-8), u64 rank, rank * u64 extents,
prod(extents) * f64`` with every integer and float little-endian.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MBRECKP1"


class CheckpointError(ValueError):
    pass


def dumps(params: dict[str, np.ndarray]) -> bytes:
    out = [MAGIC]
    for name, arr in params.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        out.append(struct.pack("<Q", len(raw)))
        out.append(raw)
        out.append(struct.pack("<Q", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(out)


def loads(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:8] != MAGIC:
        raise CheckpointError("not an MBREC checkpoint (bad magic)")
    pos, params = 8, {}
    try:
        while pos < len(buf):
            (n,) = struct.unpack_from("<Q", buf, pos)
            pos += 8
            name = buf[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<Q", buf, pos)
            pos += 8
            shape = struct.unpack_from(f"<{rank}Q", buf, pos)
            pos += 8 * rank
            count = int(np.prod(shape, dtype=np.int64))
            if pos + 8 * count > len(buf):
                raise CheckpointError(f"record {name!r} is truncated")
            params[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
            pos += 8 * count
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    return params


def save_checkpoint(path, params: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(params))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
