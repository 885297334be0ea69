"""
`hieraseg` HTF binary tensor files.

Layout: magic `HTF1` (4 bytes), u8 dtype tag (0 = float64), u8 ndim,
ndim little-endian u32 dims, then the row-major little-endian payload.
"""

from __future__ import annotations

import logging
import os
from typing import Union

import numpy as np

from hieraseg.exceptions import StorageError

logger = logging.getLogger(__name__)

MAGIC = b"HTF1"
DTYPE_TAGS = {0: np.dtype("<f8")}


def encode_htf(array) -> bytes:
    array = np.ascontiguousarray(array, dtype="<f8")
    if array.ndim > 255:
        raise StorageError(f"HTF supports at most 255 dims, got {array.ndim}")
    header = MAGIC + bytes([0, array.ndim]) + np.asarray(array.shape, dtype="<u4").tobytes()
    return header + array.tobytes(order="C")


def decode_htf(data: bytes) -> np.ndarray:
    if len(data) < 6 or data[:4] != MAGIC:
        raise StorageError("Not an HTF tensor (bad magic)")
    tag, ndim = data[4], data[5]
    if tag not in DTYPE_TAGS:
        raise StorageError(f"Unsupported HTF dtype tag {tag}")
    dims_end = 6 + 4 * ndim
    if len(data) < dims_end:
        raise StorageError("Truncated HTF header")
    shape = tuple(int(d) for d in np.frombuffer(data[6:dims_end], dtype="<u4"))
    dtype = DTYPE_TAGS[tag]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    payload = data[dims_end:]
    if len(payload) != expected:
        raise StorageError(f"HTF payload has {len(payload)} bytes, expected {expected} for shape {shape}")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).astype(np.float64)


def write_htf(path: Union[str, os.PathLike], array) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(encode_htf(array))
    except OSError as exc:
        raise StorageError(f"Cannot write {path}: {exc}") from exc


def read_htf(path: Union[str, os.PathLike]) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise StorageError(f"Cannot read {path}: {exc}") from exc
    try:
        return decode_htf(data)
    except StorageError as exc:
        raise StorageError(f"{path}: {exc}") from exc
