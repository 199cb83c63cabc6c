"""Minimal binary tensor container.

Layout (all integers unsigned 32-bit little-endian)::

    magic   4 bytes  b"WICO"
    version u32      1
    dtype   u32      1 = float32, 2 = float64
    ndim    u32
    dims    ndim x u32
    payload row-major little-endian values, prod(dims) * itemsize bytes
"""
from __future__ import annotations

import math
import os
import struct

import numpy as np

from ..errors import InputError

MAGIC = b"WICO"
VERSION = 1
DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
CODE_FOR = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


def encode(array) -> bytes:
    arr = np.asarray(getattr(array, "data", array))
    code = CODE_FOR.get(arr.dtype)
    if code is None:
        raise InputError(f"cannot store dtype {arr.dtype}; only float32 and float64 are supported")
    if any(d >= 2 ** 32 for d in arr.shape):
        raise InputError(f"extent too large for the u32 header: {arr.shape}")
    header = MAGIC + struct.pack("<III", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=DTYPE_CODES[code]).tobytes()


def decode(buf: bytes) -> np.ndarray:
    if len(buf) < 16 or buf[:4] != MAGIC:
        raise InputError("not a WICO tensor file (bad magic)")
    version, code, ndim = struct.unpack_from("<III", buf, 4)
    if version != VERSION:
        raise InputError(f"unsupported tensor file version {version}")
    if code not in DTYPE_CODES:
        raise InputError(f"unknown dtype code {code}")
    start = 16 + 4 * ndim
    if len(buf) < start:
        raise InputError("truncated tensor file header")
    dims = struct.unpack_from(f"<{ndim}I", buf, 16)
    dtype = DTYPE_CODES[code]
    expected = math.prod(dims) * dtype.itemsize
    if len(buf) - start != expected:
        raise InputError(f"payload is {len(buf) - start} bytes, header implies {expected}")
    arr = np.frombuffer(buf, dtype=dtype, offset=start, count=math.prod(dims)).reshape(dims)
    return arr.astype(dtype.newbyteorder("="))


def write_tensor(path, array) -> None:
    data = encode(array)
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise OSError(f"cannot write {os.fspath(path)}: {exc.strerror}") from exc


def read_tensor(path) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            return decode(fh.read())
    except OSError as exc:
        raise OSError(f"cannot read {os.fspath(path)}: {exc.strerror}") from exc
