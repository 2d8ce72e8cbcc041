"""SCATCKPT1 binary parameter files.

Layout, all integers little-endian::

    b"SCATCKPT1"
    u64 record count
    repeated:
        u32 name length, name bytes (utf-8)
        u32 rank, rank x u64 dimensions
        float64 payload, row-major
"""
from __future__ import annotations

import struct

import numpy as np

from ..errors import FormatError

MAGIC = b"SCATCKPT1"


def save_checkpoint(path, arrays):
    """Write ``{name: array-like or Tensor}`` in insertion order."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(arrays)))
        for name, arr in arrays.items():
            data = np.asarray(getattr(arr, "data", arr), dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}Q", *data.shape))
            fh.write(np.ascontiguousarray(data).tobytes())


def load_checkpoint(path):
    """Read a SCATCKPT1 file into an ordered ``{name: float64 array}``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(MAGIC):
        raise FormatError(f"{path}: missing SCATCKPT1 magic")
    pos = len(MAGIC)

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(blob):
            raise FormatError(f"{path}: truncated at byte {pos}")
        vals = struct.unpack_from(fmt, blob, pos)
        pos += size
        return vals

    (count,) = take("<Q")
    out = {}
    for _ in range(count):
        (nlen,) = take("<I")
        if pos + nlen > len(blob):
            raise FormatError(f"{path}: truncated name at byte {pos}")
        name = blob[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = take("<I")
        shape = take(f"<{rank}Q") if rank else ()
        n = int(np.prod(shape, dtype=np.int64)) if rank else 1
        if pos + 8 * n > len(blob):
            raise FormatError(f"{path}: truncated payload for {name!r}")
        out[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * n
    if pos != len(blob):
        raise FormatError(f"{path}: {len(blob) - pos} trailing bytes")
    return out
