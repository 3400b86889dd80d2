"""Versioned binary container for named float64 tensors plus JSON metadata.

Layout (all integers little-endian)::

    magic   8 bytes  b"TOCKPT\\x00\\x01"
    version u32
    meta    u64 length + UTF-8 JSON (sorted keys)
    count   u32
    per tensor:
        name  u16 length + UTF-8
        ndim  u8, then ndim x u64 dims
        data  prod(dims) x float64 little-endian
"""

import json
import struct

import numpy as np

from ..errors import DataError

MAGIC = b"TOCKPT\x00\x01"
VERSION = 1


def save_checkpoint(path, tensors, metadata):
    meta = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(meta)))
        fh.write(meta)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path):
    """Return ``(tensors, metadata)``; tensors keep their stored order."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != MAGIC:
        raise DataError(f"{path}: bad magic, not a checkpoint file")
    try:
        return _parse(buf, path)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"{path}: truncated or corrupt checkpoint ({exc})") from None


def _parse(buf, path):
    pos = 8
    (version,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    (mlen,) = struct.unpack_from("<Q", buf, pos)
    pos += 8
    metadata = json.loads(buf[pos:pos + mlen].decode("utf-8"))
    pos += mlen
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
        pos += 8 * ndim
        n = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * n
    if pos != len(buf):
        raise DataError(f"{path}: {len(buf) - pos} trailing bytes")
    return tensors, metadata
