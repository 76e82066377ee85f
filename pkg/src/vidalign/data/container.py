"""Reader and writer for the ``VTEN`` binary tensor container.

Layout (all little-endian)::

    magic   4 bytes  b"VTEN"
    version u16      1
    dtype   u8       0 = float64, 1 = float32
    ndim    u8
    dims    ndim x u64
    payload row-major element data
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError

MAGIC = b"VTEN"
VERSION = 1
_HEADER = struct.Struct("<4sHBB")
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_CODES = {"float64": 0, "float32": 1}


def dtype_code(dtype) -> int:
    name = np.dtype(dtype).name if not isinstance(dtype, str) else dtype
    try:
        return _CODES[name]
    except KeyError:
        raise FormatError(f"unsupported container dtype {dtype!r}") from None


def to_bytes(array, dtype="float64") -> bytes:
    code = dtype_code(dtype)
    arr = np.asarray(array)
    if arr.ndim > 255:
        raise FormatError("too many dimensions for the container")
    # float32 storage rounds to nearest
    payload = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
    header = _HEADER.pack(MAGIC, VERSION, code, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + dims + payload


def from_bytes(buf: bytes, source="<bytes>") -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise FormatError(f"{source}: truncated header at byte offset {len(buf)}, expected {_HEADER.size} bytes")
    magic, version, code, ndim = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r} at byte offset 0")
    if version != VERSION:
        raise FormatError(f"{source}: unsupported version {version} at byte offset 4")
    if code not in _DTYPES:
        raise FormatError(f"{source}: unknown dtype code {code} at byte offset 6")
    offset = _HEADER.size
    if len(buf) < offset + 8 * ndim:
        raise FormatError(f"{source}: truncated dims at byte offset {len(buf)}, expected {offset + 8 * ndim} bytes")
    dims = struct.unpack_from(f"<{ndim}Q", buf, offset)
    offset += 8 * ndim
    dtype = _DTYPES[code]
    expected = dtype.itemsize * int(np.prod(dims, dtype=np.int64))
    actual = len(buf) - offset
    if actual != expected:
        raise FormatError(
            f"{source}: payload at byte offset {offset} has {actual} bytes, expected {expected}"
        )
    return np.frombuffer(buf, dtype=dtype, offset=offset).reshape(dims).astype(dtype.newbyteorder("="))


def write_tensor(path, array, dtype="float64") -> None:
    Path(path).write_bytes(to_bytes(array, dtype))


def read_tensor(path) -> np.ndarray:
    """Array stored at ``path``, in its stored dtype (float64 or float32)."""
    return from_bytes(Path(path).read_bytes(), source=str(path))


def read_header(path) -> tuple[str, tuple[int, ...]]:
    """``(dtype name, dims)`` after validating the whole file."""
    arr = read_tensor(path)
    return arr.dtype.name, arr.shape
