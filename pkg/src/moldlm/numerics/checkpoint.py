"""Versioned binary checkpoint container.

Layout: 4-byte magic, little-endian uint32 format version, little-endian
uint64 header length, JSON header mapping each tensor name to
(dtype, shape, byte offset), then the raw little-endian tensor payloads.
Round trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

__all__ = ["save_tensors", "load_tensors", "MAGIC", "FORMAT_VERSION"]

MAGIC = b"MDLC"
FORMAT_VERSION = 1


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    index = {}
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = np.ascontiguousarray(le).tobytes()
        index[name] = {
            "dtype": le.dtype.str,
            "shape": list(arr.shape),
            "offset": offset,
        }
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"tensors": index}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for raw in blobs:
            f.write(raw)


def load_tensors(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"not a checkpoint file: bad magic {data[:4]!r}")
    (version,) = struct.unpack("<I", data[4:8])
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (hlen,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + hlen].decode("utf-8"))
    payload = data[16 + hlen:]
    out = {}
    for name, meta in header["tensors"].items():
        dtype = np.dtype(meta["dtype"])
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = meta["offset"]
        arr = np.frombuffer(payload, dtype=dtype, count=count, offset=start).reshape(shape)
        out[name] = arr.copy()
    return out
