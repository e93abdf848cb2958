"""Flat binary tensor records.

A record is ``rank`` (uint32), ``rank`` extents (uint64) and the values in
row-major order, all little-endian. Real records carry float64 values; label
records carry int64 values.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from ..exceptions import FormatError

_RANK = struct.Struct("<I")


def _write(stream: BinaryIO, arr: np.ndarray, dtype: str) -> None:
    stream.write(_RANK.pack(arr.ndim))
    stream.write(np.asarray(arr.shape, dtype="<u8").tobytes())
    stream.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    buf = stream.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated record: wanted {n} bytes, got {len(buf)}")
    return buf


def _read(stream: BinaryIO, dtype: str) -> np.ndarray:
    (rank,) = _RANK.unpack(_read_exact(stream, _RANK.size))
    if rank > 16:
        raise FormatError(f"implausible tensor rank {rank}")
    shape = tuple(int(s) for s in np.frombuffer(_read_exact(stream, 8 * rank), dtype="<u8"))
    count = int(np.prod(shape)) if shape else 1
    values = np.frombuffer(_read_exact(stream, 8 * count), dtype=dtype)
    return values.reshape(shape).astype(dtype[1:], copy=True)


def write_tensor(stream: BinaryIO, arr) -> None:
    _write(stream, np.asarray(arr), "<f8")


def read_tensor(stream: BinaryIO) -> np.ndarray:
    return _read(stream, "<f8")


def write_labels(stream: BinaryIO, arr) -> None:
    _write(stream, np.asarray(arr), "<i8")


def read_labels(stream: BinaryIO) -> np.ndarray:
    return _read(stream, "<i8")
