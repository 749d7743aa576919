"""MSB-first bit packing used by the color-map wire form and the codec stream."""

from __future__ import annotations


class StreamError(Exception):
    """Base class for every malformed-stream condition."""


class TruncatedStreamError(StreamError):
    pass


class BadMagicError(StreamError):
    pass


class VersionError(StreamError):
    pass


class CorruptStreamError(StreamError):
    """Fields decode but carry values the format does not allow."""


class BitWriter:
    def __init__(self):
        self._acc = 0
        self.bits_written = 0

    def write(self, value: int, nbits: int) -> None:
        value = int(value)
        if nbits < 0:
            raise ValueError("nbits must be non-negative")
        if value < 0 or value >> nbits:
            raise ValueError(f"value {value} does not fit in {nbits} bits")
        self._acc = (self._acc << nbits) | value
        self.bits_written += nbits

    def write_bytes(self, data: bytes) -> None:
        for byte in data:
            self.write(byte, 8)

    def write_many(self, values, nbits: int) -> None:
        for v in values:
            self.write(int(v), nbits)

    def getvalue(self) -> bytes:
        """Packed bytes; the final byte is zero-padded on the right."""
        pad = -self.bits_written % 8
        nbytes = (self.bits_written + pad) // 8
        return (self._acc << pad).to_bytes(nbytes, "big")


class BitReader:
    def __init__(self, data: bytes):
        self._data = bytes(data)
        self._value = int.from_bytes(self._data, "big")
        self.total_bits = 8 * len(self._data)
        self.pos = 0

    @property
    def remaining(self) -> int:
        return self.total_bits - self.pos

    def read(self, nbits: int) -> int:
        if nbits > self.remaining:
            raise TruncatedStreamError(
                f"need {nbits} bits at offset {self.pos}, only {self.remaining} left"
            )
        shift = self.total_bits - self.pos - nbits
        self.pos += nbits
        return (self._value >> shift) & ((1 << nbits) - 1)

    def read_bytes(self, n: int) -> bytes:
        return bytes(self.read(8) for _ in range(n))

    def read_many(self, count: int, nbits: int) -> list[int]:
        return [self.read(nbits) for _ in range(count)]

    def check_padding(self) -> None:
        """Only zero bits up to the next byte boundary may remain."""
        if self.remaining >= 8:
            raise CorruptStreamError(f"{self.remaining // 8} trailing bytes")
        if self.remaining and self.read(self.remaining):
            raise CorruptStreamError("non-zero padding bits")
