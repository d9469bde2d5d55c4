"""SFMT tensor files.

Layout, all integers unsigned 32-bit little-endian::

    b"SFMT" | version | rank | dim_0 .. dim_{rank-1} | scalar code | raw LE scalars, row-major

Scalar codes: 1 = float32, 2 = float64.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"SFMT"
VERSION = 1

SCALAR_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODE_FOR = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


def scalar_code(dtype) -> int:
    try:
        return _CODE_FOR[np.dtype(dtype).newbyteorder("=")]
    except KeyError:
        raise FormatError(f"unsupported scalar type {np.dtype(dtype)}; use float32 or float64") from None


def encode_tensor(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if array.ndim == 0:
        raise FormatError("rank-0 tensors are not representable; SFMT needs at least one dimension")
    code = scalar_code(array.dtype)
    head = MAGIC + struct.pack(f"<II{array.ndim}II", VERSION, array.ndim, *array.shape, code)
    return head + np.ascontiguousarray(array, dtype=SCALAR_CODES[code]).tobytes()


def decode_tensor(buf: bytes, source: str = "<buffer>") -> np.ndarray:
    def need(offset: int, count: int, what: str) -> None:
        if len(buf) < offset + count:
            raise FormatError(
                f"{source}: truncated while reading {what}: expected {offset + count} bytes, "
                f"file has {len(buf)}",
                offset=len(buf),
            )

    need(0, 4, "magic")
    if buf[:4] != MAGIC:
        raise FormatError(f"{source}: bad magic {buf[:4]!r}, expected {MAGIC!r}", offset=0)
    need(4, 8, "header")
    version, rank = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise FormatError(f"{source}: unsupported format version {version}", offset=4)
    if rank == 0:
        raise FormatError(f"{source}: rank 0 is not allowed", offset=8)
    need(12, 4 * rank + 4, "dimensions")
    dims = struct.unpack_from(f"<{rank}I", buf, 12)
    if 0 in dims:
        raise FormatError(f"{source}: zero-length dimension in shape {dims}", offset=12)
    code_off = 12 + 4 * rank
    (code,) = struct.unpack_from("<I", buf, code_off)
    if code not in SCALAR_CODES:
        raise FormatError(f"{source}: unknown scalar type code {code}", offset=code_off)
    dtype = SCALAR_CODES[code]
    data_off = code_off + 4
    nbytes = int(np.prod(dims)) * dtype.itemsize
    need(data_off, nbytes, "payload")
    if len(buf) > data_off + nbytes:
        raise FormatError(
            f"{source}: {len(buf) - data_off - nbytes} trailing bytes: expected {data_off + nbytes} bytes, "
            f"file has {len(buf)}",
            offset=data_off + nbytes,
        )
    arr = np.frombuffer(buf, dtype=dtype, count=int(np.prod(dims)), offset=data_off).reshape(dims)
    return arr.astype(dtype.newbyteorder("="))


def write_tensor(path: str | os.PathLike, array: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_tensor(array))


def read_tensor(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_tensor(fh.read(), source=str(path))


def read_shape(path: str | os.PathLike) -> tuple[tuple[int, ...], np.dtype]:
    """Shape and dtype from the header alone."""
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) < 12 or head[:4] != MAGIC:
            raise FormatError(f"{path}: not an SFMT file", offset=0)
        version, rank = struct.unpack_from("<II", head, 4)
        if version != VERSION or rank == 0:
            raise FormatError(f"{path}: bad version {version} or rank {rank}", offset=4)
        rest = fh.read(4 * rank + 4)
        if len(rest) < 4 * rank + 4:
            raise FormatError(f"{path}: truncated header", offset=12 + len(rest))
        dims = struct.unpack_from(f"<{rank}I", rest)
        (code,) = struct.unpack_from("<I", rest, 4 * rank)
        if code not in SCALAR_CODES:
            raise FormatError(f"{path}: unknown scalar type code {code}", offset=12 + 4 * rank)
        return tuple(dims), SCALAR_CODES[code]
