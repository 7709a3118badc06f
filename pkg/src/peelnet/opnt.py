"""Raw tensor file format "OPNT".

Layout: magic bytes ``OPNT``, little-endian u32 rank, rank little-endian u32
extents, then the float32 payload in row-major order.  Used for checkpoints,
golden tests, frame export, and attention score dumps.
"""

from __future__ import annotations

import io
import struct

import numpy as np

MAGIC = b"OPNT"


def pack(array: np.ndarray) -> bytes:
    # asarray keeps rank-0 inputs rank 0; tobytes() is row-major regardless
    arr = np.asarray(array, dtype=np.float32)
    header = MAGIC + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes()


def unpack(buf: bytes) -> np.ndarray:
    stream = io.BytesIO(buf)
    return read(stream)


def write(path_or_file, array: np.ndarray) -> None:
    data = pack(array)
    if hasattr(path_or_file, "write"):
        path_or_file.write(data)
    else:
        with open(path_or_file, "wb") as fh:
            fh.write(data)


def read(path_or_file) -> np.ndarray:
    if hasattr(path_or_file, "read"):
        return _read_stream(path_or_file)
    with open(path_or_file, "rb") as fh:
        return _read_stream(fh)


def _read_stream(fh) -> np.ndarray:
    magic = fh.read(4)
    if magic != MAGIC:
        raise ValueError(f"not an OPNT payload (magic {magic!r})")
    (rank,) = struct.unpack("<I", fh.read(4))
    shape = struct.unpack(f"<{rank}I", fh.read(4 * rank))
    count = int(np.prod(shape)) if rank else 1
    payload = fh.read(4 * count)
    if len(payload) != 4 * count:
        raise ValueError("truncated OPNT payload")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
