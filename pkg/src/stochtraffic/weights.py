"""Binary weight container.

Layout (little-endian)::

    b"TGSM"  u32 version  u32 count
    count x ( u32 name_len, name utf-8, u32 rank, rank x u64 dim, float64 data )
    u32 meta_len, meta utf-8 JSON              # version 1, may be empty

Arrays are stored as float64 and round-trip bit-exactly.
"""

from __future__ import annotations

import json
import struct
from typing import Any, Mapping, Optional

import numpy as np

MAGIC = b"TGSM"
VERSION = 1


class WeightFileError(ValueError):
    pass


def dumps(arrays: Mapping[str, np.ndarray], metadata: Optional[Mapping[str, Any]] = None) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays.items():
        a = np.asarray(arr, dtype="<f8")  # keeps 0-d shape, unlike ascontiguousarray
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}Q", *a.shape))
        parts.append(a.tobytes(order="C"))
    meta = json.dumps(dict(metadata or {}), sort_keys=True).encode("utf-8") if metadata else b""
    parts.append(struct.pack("<I", len(meta)))
    parts.append(meta)
    return b"".join(parts)


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    if blob[:4] != MAGIC:
        raise WeightFileError("not a weight container (bad magic)")
    pos = 4

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(blob):
            raise WeightFileError("truncated weight container")
        vals = struct.unpack_from(fmt, blob, pos)
        pos += size
        return vals

    version, count = take("<II")
    if version != VERSION:
        raise WeightFileError(f"unsupported container version {version}")
    arrays = {}
    for _ in range(count):
        (n,) = take("<I")
        name = blob[pos : pos + n].decode("utf-8")
        pos += n
        (rank,) = take("<I")
        dims = take(f"<{rank}Q") if rank else ()
        size = int(np.prod(dims)) if rank else 1
        if pos + 8 * size > len(blob):
            raise WeightFileError(f"truncated data for {name!r}")
        arrays[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(dims).astype(np.float64)
        pos += 8 * size
    (meta_len,) = take("<I")
    meta = json.loads(blob[pos : pos + meta_len].decode("utf-8")) if meta_len else {}
    return arrays, meta


def save(path, arrays: Mapping[str, np.ndarray], metadata: Optional[Mapping[str, Any]] = None) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(arrays, metadata))


def load(path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    with open(path, "rb") as fh:
        return loads(fh.read())
