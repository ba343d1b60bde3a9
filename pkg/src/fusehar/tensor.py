"""Dense float32 tensors and the ``.hart`` binary format.

Tensors are plain C-contiguous ``numpy.float32`` arrays of rank 1 to 4. The
on-disk record is::

    b"HART" | version:u32 | rank:u32 | dim_0:u32 ... dim_{rank-1}:u32 | payload

with every integer and the float32 payload stored little-endian, row-major.
"""

from __future__ import annotations

import io
import os
import struct
from typing import BinaryIO, Sequence

import numpy as np

MAGIC = b"HART"
FORMAT_VERSION = 1
MAX_RANK = 4

_U32 = struct.Struct("<I")
_LE_F32 = np.dtype("<f4")


class ShapeError(ValueError):
    """Invalid dimensions or an element-count mismatch."""


class TensorFormatError(ValueError):
    """Base class for malformed ``.hart`` records."""


class BadMagicError(TensorFormatError):
    pass


class VersionMismatchError(TensorFormatError):
    pass


class TruncatedError(TensorFormatError):
    pass


def check_dims(dims: Sequence[int]) -> tuple[int, ...]:
    dims = tuple(int(d) for d in dims)
    if not dims:
        raise ShapeError("dims must not be empty")
    if len(dims) > MAX_RANK:
        raise ShapeError(f"rank {len(dims)} exceeds maximum of {MAX_RANK}")
    if any(d < 1 for d in dims):
        raise ShapeError(f"all dims must be >= 1, got {list(dims)}")
    return dims


def as_tensor(data) -> np.ndarray:
    """Return ``data`` as a contiguous float32 array with a valid shape."""
    arr = np.ascontiguousarray(data, dtype=np.float32)
    check_dims(arr.shape)
    return arr


def create(dims: Sequence[int], fill: float = 0.0) -> np.ndarray:
    return np.full(check_dims(dims), fill, dtype=np.float32)


def reshape(t: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    """Reinterpret ``t`` with new dims; the flat data order is unchanged."""
    dims = check_dims(dims)
    if int(np.prod(dims)) != t.size:
        raise ShapeError(f"cannot reshape {t.size} elements into {list(dims)}")
    return np.ascontiguousarray(t).reshape(dims)


def write_tensor(t: np.ndarray, sink: BinaryIO) -> None:
    arr = as_tensor(t)
    header = [MAGIC, _U32.pack(FORMAT_VERSION), _U32.pack(arr.ndim)]
    header += [_U32.pack(d) for d in arr.shape]
    sink.write(b"".join(header))
    sink.write(arr.astype(_LE_F32, copy=False).tobytes(order="C"))


def _read_exact(source: BinaryIO, n: int, what: str) -> bytes:
    buf = source.read(n)
    if len(buf) != n:
        raise TruncatedError(f"truncated {what}: expected {n} bytes, got {len(buf)}")
    return buf


def read_tensor(source: BinaryIO) -> np.ndarray:
    magic = source.read(4)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = _U32.unpack(_read_exact(source, 4, "header"))
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"unsupported format version {version}, expected {FORMAT_VERSION}")
    (rank,) = _U32.unpack(_read_exact(source, 4, "header"))
    if not 1 <= rank <= MAX_RANK:
        raise TensorFormatError(f"invalid rank {rank}")
    dims = struct.unpack(f"<{rank}I", _read_exact(source, 4 * rank, "header"))
    try:
        dims = check_dims(dims)
    except ShapeError as exc:
        raise TensorFormatError(str(exc)) from None
    count = int(np.prod(dims))
    payload = _read_exact(source, 4 * count, "payload")
    return np.frombuffer(payload, dtype=_LE_F32).astype(np.float32).reshape(dims)


def to_bytes(t: np.ndarray) -> bytes:
    buf = io.BytesIO()
    write_tensor(t, buf)
    return buf.getvalue()


def from_bytes(data: bytes) -> np.ndarray:
    return read_tensor(io.BytesIO(data))


def save(t: np.ndarray, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        write_tensor(t, fh)


def load(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor(fh)
