"""Binary tensor container used by every artifact that persists arrays.

Layout: 8-byte magic ``MAS3TNSR``, little-endian u32 rank, ``rank``
little-endian u64 extents, then the row-major little-endian f64 payload.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .errors import CorruptFileError

MAGIC = b"MAS3TNSR"


def save_tensor(path: str | os.PathLike, array) -> None:
    arr = np.asarray(array, dtype=np.float64)
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(arr.ndim).astype("<u4").tobytes())
        fh.write(np.asarray(arr.shape, dtype="<u8").tobytes())
        fh.write(arr.astype("<f8", copy=False).tobytes())  # tobytes emits C order


def load_tensor(path: str | os.PathLike) -> np.ndarray:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < len(MAGIC) + 4 or data[: len(MAGIC)] != MAGIC:
        raise CorruptFileError(f"{path}: bad or missing tensor magic")
    offset = len(MAGIC)
    rank = int(np.frombuffer(data, dtype="<u4", count=1, offset=offset)[0])
    offset += 4
    if len(data) < offset + 8 * rank:
        raise CorruptFileError(f"{path}: truncated extents block")
    shape = np.frombuffer(data, dtype="<u8", count=rank, offset=offset)
    offset += 8 * rank
    n = int(np.prod(shape)) if rank else 1
    expected = offset + 8 * n
    if len(data) != expected:
        raise CorruptFileError(
            f"{path}: payload length {len(data) - offset} bytes, expected {8 * n}"
        )
    flat = np.frombuffer(data, dtype="<f8", count=n, offset=offset)
    return flat.astype(np.float64).reshape(tuple(int(s) for s in shape))
