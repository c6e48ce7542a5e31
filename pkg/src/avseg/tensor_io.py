"""Binary tensor persistence: "CTNS" magic, version, rank, u64 extents, f64 payload.

All integers and floats are little-endian.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"CTNS"
VERSION = 1


def write_tensor(path, array: np.ndarray):
    arr = np.asarray(array, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BB", VERSION, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.astype("<f8").tobytes(order="C"))


def read_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}")
    version, rank = struct.unpack_from("<BB", raw, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    extents = struct.unpack_from(f"<{rank}Q", raw, 6)
    offset = 6 + 8 * rank
    count = int(np.prod(extents)) if rank else 1
    data = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
    return data.reshape(extents).astype(np.float64)
