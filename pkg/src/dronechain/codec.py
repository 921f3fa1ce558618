"""Canonical binary encoding primitives.

Conventions: integers are 64-bit big-endian (``u8`` fields are one byte),
byte strings carry a 32-bit big-endian length prefix, lists a 32-bit count.
"""

from __future__ import annotations

import struct

MAX_U64 = 2**64 - 1
_U8 = struct.Struct(">B")
_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")


class DecodeError(ValueError):
    pass


class Writer:
    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def u8(self, value: int) -> "Writer":
        if not 0 <= value <= 0xFF:
            raise ValueError(f"u8 out of range: {value}")
        self._parts.append(bytes((value,)))
        return self

    def u32(self, value: int) -> "Writer":
        self._parts.append(struct.pack(">I", value))
        return self

    def u64(self, value: int) -> "Writer":
        if not 0 <= value <= MAX_U64:
            raise ValueError(f"u64 out of range: {value}")
        self._parts.append(struct.pack(">Q", value))
        return self

    def bytes(self, value: bytes) -> "Writer":
        self._parts.append(struct.pack(">I", len(value)))
        self._parts.append(bytes(value))
        return self

    def str(self, value: str) -> "Writer":
        return self.bytes(value.encode("utf-8"))

    def raw(self, value: bytes) -> "Writer":
        self._parts.append(bytes(value))
        return self

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    def __init__(self, data: bytes) -> None:
        self._data = bytes(data)
        self._pos = 0

    def _take(self, n: int) -> bytes:
        end = self._pos + n
        if n < 0 or end > len(self._data):
            raise DecodeError(f"truncated input at offset {self._pos}")
        chunk = self._data[self._pos : end]
        self._pos = end
        return chunk

    def _unpack(self, fmt: struct.Struct) -> int:
        try:
            (value,) = fmt.unpack_from(self._data, self._pos)
        except struct.error:
            raise DecodeError(f"truncated input at offset {self._pos}") from None
        self._pos += fmt.size
        return value

    def u8(self) -> int:
        return self._unpack(_U8)

    def u32(self) -> int:
        return self._unpack(_U32)

    def u64(self) -> int:
        return self._unpack(_U64)

    def bytes(self, max_len: int | None = None) -> bytes:
        start = self._pos + 4
        if start > len(self._data):
            raise DecodeError(f"truncated input at offset {self._pos}")
        (n,) = _U32.unpack_from(self._data, self._pos)
        if max_len is not None and n > max_len:
            raise DecodeError(f"byte string too long ({n} > {max_len})")
        end = start + n
        if end > len(self._data):
            raise DecodeError(f"truncated input at offset {start}")
        self._pos = end
        return self._data[start:end]

    def str(self) -> str:
        try:
            return self.bytes().decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError(str(exc)) from None

    def digest(self) -> bytes:
        value = self.bytes()
        if len(value) != 32:
            raise DecodeError(f"digest must be 32 bytes, got {len(value)}")
        return value

    def count(self, limit: int = 1_000_000) -> int:
        n = self.u32()
        if n > limit:
            raise DecodeError(f"list length {n} exceeds limit {limit}")
        return n

    @property
    def remaining(self) -> int:
        return len(self._data) - self._pos

    def finish(self) -> None:
        if self.remaining:
            raise DecodeError(f"{self.remaining} trailing bytes")
