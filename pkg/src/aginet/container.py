"""The TNSR tensor container.

Byte layout (all integers little-endian)::

    b"TNSR"                magic
    u8   version           == 1
    u32  entry count
    per entry:
        u16  name length, then UTF-8 name bytes
        u8   dtype         1 = float32, 2 = float64
        u8   ndim
        u32  dims[ndim]
        raw little-endian row-major data
"""

from __future__ import annotations

import os
import struct
from typing import Mapping

import numpy as np

MAGIC = b"TNSR"
VERSION = 1
_DTYPE_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}
_CODE_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


class ContainerError(ValueError):
    pass


class BadMagicError(ContainerError):
    pass


class TruncatedFileError(ContainerError):
    pass


class UnknownDtypeError(ContainerError):
    pass


class UnsupportedVersionError(ContainerError):
    pass


def encode(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<BI", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        code = _DTYPE_CODES.get(dt)
        if code is None:
            raise UnknownDtypeError(f"entry {name!r}: dtype {arr.dtype} not storable (float32/float64 only)")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedFileError(f"unexpected end of data at byte {self.pos} (needed {n} more)")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        if len(buf) < 4 and MAGIC.startswith(buf):
            raise TruncatedFileError("file shorter than the magic header")
        raise BadMagicError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    r = _Reader(buf)
    r.take(4)
    version, count = r.unpack("<BI")
    if version != VERSION:
        raise UnsupportedVersionError(f"container version {version} not supported")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        code, ndim = r.unpack("<BB")
        dt = _CODE_DTYPES.get(code)
        if dt is None:
            raise UnknownDtypeError(f"entry {name!r}: unknown dtype byte {code}")
        dims = r.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        arr = np.frombuffer(r.take(size), dtype=dt).reshape(dims)
        out[name] = arr.astype(dt.newbyteorder("="), copy=True)
    return out


def save_tensors(path: str | os.PathLike, tensors: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(tensors))


def load_tensors(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return decode(fh.read())
