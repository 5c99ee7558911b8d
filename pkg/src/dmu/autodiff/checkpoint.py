"""Versioned binary checkpoints.

Layout::

    b"DMUCKPT1"                    magic (8 bytes)
    u32 version, u32 header_len    little-endian
    header                         UTF-8 JSON: metadata + layer manifest
                                   [{name, shape, dtype, offset, nbytes}, ...]
    blobs                          little-endian arrays, in manifest order
    u32 crc32                      over everything before it
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"DMUCKPT1"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(arrays: dict[str, np.ndarray], metadata: dict | None = None) -> bytes:
    manifest, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        blob = np.ascontiguousarray(le).tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.name,
                         "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"metadata": metadata or {}, "layers": manifest}, sort_keys=True).encode("utf-8")
    body = MAGIC + struct.pack("<II", VERSION, len(header)) + header + b"".join(blobs)
    return body + struct.pack("<I", zlib.crc32(body))


def loads(buf: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if len(buf) < len(MAGIC) + 12 or buf[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (crc,) = struct.unpack("<I", buf[-4:])
    if zlib.crc32(buf[:-4]) != crc:
        raise CheckpointError("checksum mismatch; file is corrupt or truncated")
    version, header_len = struct.unpack("<II", buf[len(MAGIC): len(MAGIC) + 8])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = len(MAGIC) + 8
    header = json.loads(buf[start: start + header_len].decode("utf-8"))
    base = start + header_len
    arrays = {}
    for entry in header["layers"]:
        dtype = np.dtype(entry["dtype"]).newbyteorder("<")
        lo = base + entry["offset"]
        raw = np.frombuffer(buf[lo: lo + entry["nbytes"]], dtype=dtype)
        arrays[entry["name"]] = raw.reshape(entry["shape"]).astype(np.dtype(entry["dtype"]))
    return arrays, header["metadata"]


def save(path, arrays: dict[str, np.ndarray], metadata: dict | None = None) -> None:
    """Atomic write: temp file in the same directory, then rename."""
    path = Path(path)
    data = dumps(arrays, metadata)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())
