"""RSTF binary tensor files.

Layout (little endian)::

    b"RSTF" | u32 version (=1) | u32 ndim | ndim x u64 dims | float32 payload

The payload is row-major; a displacement field is stored as ``[H, W, 2]``.
"""

from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"RSTF"
VERSION = 1


def write_tensor(path, array) -> None:
    arr = np.ascontiguousarray(array, dtype="<f4")
    header = MAGIC + struct.pack("<II", VERSION, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes(order="C"))


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise ValueError(f"{os.fspath(path)}: not an RSTF file")
    version, ndim = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise ValueError(f"{os.fspath(path)}: unsupported RSTF version {version}")
    offset = 12 + 8 * ndim
    if len(blob) < offset:
        raise ValueError(f"{os.fspath(path)}: truncated header")
    dims = struct.unpack_from(f"<{ndim}Q", blob, 12)
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    if len(blob) - offset != 4 * count:
        raise ValueError(f"{os.fspath(path)}: payload is {len(blob) - offset} bytes, "
                         f"expected {4 * count}")
    data = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
    return data.reshape(dims).astype(np.float32)
