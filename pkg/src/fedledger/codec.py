"""Canonical binary encoding for ledger records.

Every on-chain structure has exactly one byte representation: fixed field
order, little-endian fixed-width integers, UTF-8 strings and byte strings
with u32 length prefixes. Digests recompute identically across processes,
which is what makes payload hashes and block hashes reproducible.
"""

from __future__ import annotations

import hashlib
import struct

DIGEST_SIZE = 32
ZERO_DIGEST = b"\x00" * DIGEST_SIZE


class CodecError(ValueError):
    """Malformed or truncated canonical encoding."""


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


class Writer:
    """Appends fixed-layout fields to a byte buffer."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def u8(self, v: int) -> "Writer":
        self._buf += struct.pack("<B", v)
        return self

    def u32(self, v: int) -> "Writer":
        self._buf += struct.pack("<I", v)
        return self

    def u64(self, v: int) -> "Writer":
        self._buf += struct.pack("<Q", v)
        return self

    def f64(self, v: float) -> "Writer":
        self._buf += struct.pack("<d", v)
        return self

    def boolean(self, v: bool) -> "Writer":
        return self.u8(1 if v else 0)

    def raw(self, data: bytes) -> "Writer":
        self._buf += data
        return self

    def digest(self, d: bytes) -> "Writer":
        if len(d) != DIGEST_SIZE:
            raise CodecError(f"digest must be {DIGEST_SIZE} bytes, got {len(d)}")
        self._buf += d
        return self

    def bytes_(self, data: bytes) -> "Writer":
        self.u32(len(data))
        self._buf += data
        return self

    def str_(self, s: str) -> "Writer":
        return self.bytes_(s.encode("utf-8"))

    def opt_u64(self, v: int | None) -> "Writer":
        if v is None:
            return self.u8(0)
        return self.u8(1).u64(v)

    def getvalue(self) -> bytes:
        return bytes(self._buf)


class Reader:
    """Reads fields back in the same order Writer produced them."""

    def __init__(self, data: bytes) -> None:
        self._data = data
        self._pos = 0

    def _take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise CodecError("truncated encoding")
        out = self._data[self._pos : self._pos + n]
        self._pos += n
        return out

    def u8(self) -> int:
        return struct.unpack("<B", self._take(1))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self._take(8))[0]

    def boolean(self) -> bool:
        v = self.u8()
        if v not in (0, 1):
            raise CodecError(f"invalid boolean byte {v}")
        return v == 1

    def digest(self) -> bytes:
        return self._take(DIGEST_SIZE)

    def bytes_(self) -> bytes:
        n = self.u32()
        return self._take(n)

    def str_(self) -> str:
        try:
            return self.bytes_().decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CodecError("invalid utf-8 in string field") from exc

    def opt_u64(self) -> int | None:
        flag = self.u8()
        if flag == 0:
            return None
        if flag != 1:
            raise CodecError(f"invalid optional flag {flag}")
        return self.u64()

    def expect_end(self) -> None:
        if self._pos != len(self._data):
            raise CodecError(f"{len(self._data) - self._pos} trailing bytes")
