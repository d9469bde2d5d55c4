"""Head checkpoints.

Layout (integers little-endian)::

    b"IPCK" | u32 version | u32 header length | header (UTF-8 JSON, sorted keys, compact)
    | u32 blob count | blobs | u32 CRC-32 of everything before it

    blob := u16 name length | name (UTF-8) | u8 scalar code | u8 rank | u32 dims[rank] | raw LE scalars

The header holds ``{"head_config": {...}, "meta": {...}}``. Parameter blobs
are named ``param/<name>``; optimizer state lives under ``adam/``.
Scalar codes: 1 float32, 2 float64, 3 int64.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError
from .model import HeadConfig, HeadParams, check_params

MAGIC = b"IPCK"
VERSION = 1
_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8")}
_CODE_FOR = {np.dtype(np.float32): 1, np.dtype(np.float64): 2, np.dtype(np.int64): 3}


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass
class Checkpoint:
    config: HeadConfig
    params: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)
    extras: dict[str, np.ndarray] = field(default_factory=dict)

    def head_params(self) -> HeadParams:
        p = HeadParams.from_arrays(self.params)
        check_params(p, self.config)
        return p


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    header = canonical_json({"head_config": ckpt.config.to_dict(), "meta": ckpt.meta}).encode()
    blobs = [(f"param/{k}", v) for k, v in ckpt.params.items()]
    blobs += sorted(ckpt.extras.items())
    parts = [MAGIC, struct.pack("<II", VERSION, len(header)), header, struct.pack("<I", len(blobs))]
    for name, arr in blobs:
        arr = np.asarray(arr)
        try:
            code = _CODE_FOR[arr.dtype.newbyteorder("=")]
        except KeyError:
            raise FormatError(f"blob {name}: unsupported dtype {arr.dtype}") from None
        raw = name.encode()
        parts.append(struct.pack(f"<H{len(raw)}sBB", len(raw), raw, code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_CODES[code]).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_checkpoint(buf: bytes, source: str = "<buffer>") -> Checkpoint:
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(
                f"{source}: truncated while reading {what}: expected {pos + n} bytes, file has {len(buf)}",
                offset=len(buf),
            )
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise FormatError(f"{source}: bad magic, not a checkpoint", offset=0)
    version, hlen = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise FormatError(f"{source}: unsupported checkpoint version {version}", offset=4)
    try:
        header = json.loads(take(hlen, "header text").decode())
        config = HeadConfig.from_dict(header["head_config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{source}: unreadable header: {exc}", offset=12) from exc
    (count,) = struct.unpack("<I", take(4, "blob count"))
    params: dict[str, np.ndarray] = {}
    extras: dict[str, np.ndarray] = {}
    for _ in range(count):
        start = pos
        (nlen,) = struct.unpack("<H", take(2, "blob name length"))
        name = take(nlen, "blob name").decode()
        code, rank = struct.unpack("<BB", take(2, "blob type"))
        if code not in _CODES:
            raise FormatError(f"{source}: blob {name} has unknown scalar code {code}", offset=start)
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "blob dims"))
        dtype = _CODES[code]
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(take(n * dtype.itemsize, f"blob {name}"), dtype=dtype).reshape(dims)
        arr = arr.astype(dtype.newbyteorder("="))
        if name.startswith("param/"):
            params[name[len("param/"):]] = arr
        else:
            extras[name] = arr
    (crc,) = struct.unpack("<I", take(4, "checksum"))
    if pos != len(buf):
        raise FormatError(f"{source}: {len(buf) - pos} unexpected trailing bytes", offset=pos)
    if crc != zlib.crc32(buf[: pos - 4]):
        raise FormatError(f"{source}: checksum mismatch, file is corrupted", offset=pos - 4)
    return Checkpoint(config, params, header.get("meta", {}), extras)


def save_checkpoint(path: str | os.PathLike, ckpt: Checkpoint) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(encode_checkpoint(ckpt))
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read(), source=str(path))
