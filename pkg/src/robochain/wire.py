"""Canonical binary serialization shared by the ledger, query service and
model store.

Every structure is encoded as a sequence of fields in declared order, each
field wrapped as ``4-byte little-endian length || field bytes``.  Integers
are 8-byte little-endian unsigned, reals 8-byte IEEE-754 little-endian.
Two encoders that agree on a schema produce identical bytes, so content
hashes are stable across processes.
"""

from __future__ import annotations

import hashlib
import struct

DIGEST_SIZE = 32
ZERO_DIGEST = b"\x00" * DIGEST_SIZE


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def lp(field: bytes) -> bytes:
    """Length-prefix a single field."""
    return struct.pack("<I", len(field)) + field


def enc_u64(n: int) -> bytes:
    if n < 0:
        raise ValueError(f"canonical integers are unsigned, got {n}")
    return struct.pack("<Q", n)


def enc_f64(x: float) -> bytes:
    return struct.pack("<d", x)


def enc_str(s: str) -> bytes:
    return s.encode("utf-8")


def dec_u64(b: bytes) -> int:
    if len(b) != 8:
        raise ValueError(f"expected 8-byte integer field, got {len(b)} bytes")
    return struct.unpack("<Q", b)[0]


def dec_f64(b: bytes) -> float:
    if len(b) != 8:
        raise ValueError(f"expected 8-byte real field, got {len(b)} bytes")
    return struct.unpack("<d", b)[0]


class Reader:
    """Sequential reader for the length-prefixed encoding."""

    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0

    def take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise ValueError("truncated canonical record")
        out = self._data[self._pos:self._pos + n]
        self._pos += n
        return out

    def field(self) -> bytes:
        (n,) = struct.unpack("<I", self.take(4))
        return self.take(n)

    def u64(self) -> int:
        return dec_u64(self.take(8))

    def f64(self) -> float:
        return dec_f64(self.take(8))

    @property
    def exhausted(self) -> bool:
        return self._pos == len(self._data)

    @property
    def remaining(self) -> int:
        return len(self._data) - self._pos

    def expect_end(self) -> None:
        if not self.exhausted:
            raise ValueError(f"{self.remaining} trailing bytes in canonical record")
