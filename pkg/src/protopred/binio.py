"""Little-endian binary readers/writers for the package's file formats.

The reader tracks its byte offset so parse errors can report exactly where
a file went bad.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError


class Writer:
    """Accumulates little-endian fields into a bytes buffer."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def raw(self, data: bytes) -> None:
        self._buf += data

    def u8(self, value: int) -> None:
        self._buf += struct.pack("<B", value)

    def u32(self, value: int) -> None:
        self._buf += struct.pack("<I", value)

    def u64(self, value: int) -> None:
        self._buf += struct.pack("<Q", value)

    def i64(self, value: int) -> None:
        self._buf += struct.pack("<q", value)

    def f64(self, value: float) -> None:
        self._buf += struct.pack("<d", value)

    def string(self, text: str) -> None:
        data = text.encode("utf-8")
        self.u32(len(data))
        self._buf += data

    def f64_array(self, arr: np.ndarray) -> None:
        self._buf += np.ascontiguousarray(arr, dtype="<f8").tobytes()

    def getvalue(self) -> bytes:
        return bytes(self._buf)


class Reader:
    """Reads little-endian fields, raising FormatError with the offset."""

    def __init__(self, data: bytes, name: str = "<bytes>") -> None:
        self._data = data
        self._pos = 0
        self._name = name

    @property
    def offset(self) -> int:
        return self._pos

    def _take(self, n: int, what: str) -> bytes:
        if self._pos + n > len(self._data):
            raise FormatError(
                f"{self._name}: truncated while reading {what} at offset {self._pos} "
                f"(need {n} bytes, have {len(self._data) - self._pos})"
            )
        chunk = self._data[self._pos:self._pos + n]
        self._pos += n
        return chunk

    def raw(self, n: int, what: str = "bytes") -> bytes:
        return self._take(n, what)

    def u8(self, what: str = "u8") -> int:
        return struct.unpack("<B", self._take(1, what))[0]

    def u32(self, what: str = "u32") -> int:
        return struct.unpack("<I", self._take(4, what))[0]

    def u64(self, what: str = "u64") -> int:
        return struct.unpack("<Q", self._take(8, what))[0]

    def i64(self, what: str = "i64") -> int:
        return struct.unpack("<q", self._take(8, what))[0]

    def f64(self, what: str = "f64") -> float:
        return struct.unpack("<d", self._take(8, what))[0]

    def string(self, what: str = "string") -> str:
        n = self.u32(what + " length")
        return self._take(n, what).decode("utf-8")

    def f64_array(self, count: int, what: str = "f64 array") -> np.ndarray:
        data = self._take(8 * count, what)
        return np.frombuffer(data, dtype="<f8").astype(np.float64)

    def expect_magic(self, magic: bytes) -> None:
        got = self._take(len(magic), "magic")
        if got != magic:
            raise FormatError(
                f"{self._name}: bad magic {got!r} at offset 0 (expected {magic!r})"
            )

    def done(self) -> None:
        if self._pos != len(self._data):
            raise FormatError(
                f"{self._name}: {len(self._data) - self._pos} trailing bytes at offset {self._pos}"
            )
