"""Portable binary tensor format used for datasets and checkpoints.

Layout (all little-endian):

    magic   4 bytes  b"TNSR"
    version u32      currently 1
    dtype   u32      1 = float64, 2 = uint8
    rank    u32
    dims    u64[rank]
    payload raw values, row-major

Round trips are bit-exact. Corrupt files raise a *distinct* error per
failure mode (bad magic, unknown dtype, truncated payload).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"TNSR"
VERSION = 1
_DTYPE_CODES = {np.dtype("<f8"): 1, np.dtype("u1"): 2}
_CODE_DTYPES = {1: np.dtype("<f8"), 2: np.dtype("u1")}
_MAX_RANK = 32


class TensorFileError(ValueError):
    """Base class for tensor-file format violations."""


class BadMagicError(TensorFileError):
    pass


class UnknownDtypeError(TensorFileError):
    pass


class TruncatedPayloadError(TensorFileError):
    pass


def write_tensor(path, x: np.ndarray) -> None:
    x = np.asarray(x)
    if x.dtype == np.float64:
        x = x.astype("<f8", copy=False)
    code = _DTYPE_CODES.get(x.dtype)
    if code is None:
        raise UnknownDtypeError(f"unsupported dtype {x.dtype}; use float64 or uint8")
    header = struct.pack("<4sIII", MAGIC, VERSION, code, x.ndim)
    dims = struct.pack(f"<{x.ndim}Q", *x.shape) if x.ndim else b""
    Path(path).write_bytes(header + dims + np.ascontiguousarray(x).tobytes())


def read_tensor(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < 16:
        raise TruncatedPayloadError(f"{path}: file shorter than header")
    magic, version, code, rank = struct.unpack_from("<4sIII", blob, 0)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise TensorFileError(f"{path}: unsupported version {version}")
    dtype = _CODE_DTYPES.get(code)
    if dtype is None:
        raise UnknownDtypeError(f"{path}: unknown dtype code {code}")
    if rank > _MAX_RANK:
        raise TensorFileError(f"{path}: rank {rank} too large")
    offset = 16
    if len(blob) < offset + 8 * rank:
        raise TruncatedPayloadError(f"{path}: dims truncated")
    dims = struct.unpack_from(f"<{rank}Q", blob, offset) if rank else ()
    offset += 8 * rank
    count = 1
    for d in dims:
        count *= d
    expected = count * dtype.itemsize
    payload = blob[offset:]
    if len(payload) < expected:
        raise TruncatedPayloadError(f"{path}: payload {len(payload)} < expected {expected}")
    if len(payload) > expected:
        raise TensorFileError(f"{path}: {len(payload) - expected} trailing bytes")
    arr = np.frombuffer(payload, dtype=dtype, count=count).reshape(dims)
    return arr.astype(np.float64) if dtype == np.dtype("<f8") else arr.copy()
