"""Byte-oriented range coder over 16-bit quantized cumulative tables.

Carry handling follows the classic scheme: a one-byte cache plus a run of
pending 0xFF bytes that a carry can still flip. The encoder emits a leading
zero byte (the initial cache) that the decoder skips; flushing writes five
bytes so the decoder's 32-bit window is always backed by real data.

Wire format of a coded segment: u32 little-endian payload length, then the
payload bytes. Decoding never reads past the declared payload.
"""

from __future__ import annotations

import struct

import numpy as np

from .entropy import CDF_TOTAL, CdfTable
from .errors import BitstreamError, DataError

_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF


class RangeEncoder:
    def __init__(self):
        self._low = 0
        self._range = _MASK32
        self._cache = 0
        self._pending = 1  # cache byte plus any carry-sensitive 0xFF run
        self._out = bytearray()

    def encode(self, cum_lo: int, cum_hi: int) -> None:
        """Narrow the interval to [cum_lo, cum_hi) in 1/2^16 units."""
        r = self._range >> 16
        self._low += r * cum_lo
        self._range = r * (cum_hi - cum_lo)
        while self._range < _TOP:
            self._shift_low()
            self._range = (self._range << 8) & _MASK32

    def _shift_low(self) -> None:
        if self._low < 0xFF000000 or self._low > _MASK32:
            carry = self._low >> 32
            self._out.append((self._cache + carry) & 0xFF)
            self._out.extend(((0xFF + carry) & 0xFF,) * (self._pending - 1))
            self._pending = 0
            self._cache = (self._low >> 24) & 0xFF
        self._pending += 1
        self._low = (self._low << 8) & _MASK32

    def finish(self) -> bytes:
        for _ in range(5):
            self._shift_low()
        return bytes(self._out)


class RangeDecoder:
    def __init__(self, payload: bytes):
        if len(payload) < 5:
            raise BitstreamError(f"range-coded payload needs >= 5 bytes, got {len(payload)}")
        self._data = payload
        self._pos = 1  # skip the encoder's leading cache byte
        self._range = _MASK32
        self._code = 0
        for _ in range(4):
            self._code = (self._code << 8) | self._data[self._pos]
            self._pos += 1

    def decode(self, cdf_row: np.ndarray) -> int:
        """Next symbol index under the given cumulative row."""
        r = self._range >> 16
        target = min(self._code // r, CDF_TOTAL - 1)
        idx = int(np.searchsorted(cdf_row, target, side="right")) - 1
        cum_lo = int(cdf_row[idx])
        cum_hi = int(cdf_row[idx + 1])
        self._code -= r * cum_lo
        self._range = r * (cum_hi - cum_lo)
        while self._range < _TOP:
            if self._pos >= len(self._data):
                raise BitstreamError("range-coded payload truncated mid-stream")
            self._code = ((self._code << 8) | self._data[self._pos]) & _MASK32
            self._pos += 1
            self._range = (self._range << 8) & _MASK32
        return idx


def range_encode(symbols: np.ndarray, tables: CdfTable) -> bytes:
    """Length-prefixed coded segment for integer symbols under per-position tables."""
    symbols = np.asarray(symbols, dtype=np.int64).reshape(-1)
    if tables.rows.shape[0] not in (1, symbols.size) and symbols.size > 0:
        raise DataError(
            f"{tables.rows.shape[0]} cdf rows cannot cover {symbols.size} symbols"
        )
    enc = RangeEncoder()
    count = tables.symbol_count
    for i, value in enumerate(symbols):
        idx = int(value) - tables.offset
        if idx < 0 or idx >= count:
            raise DataError(f"symbol {int(value)} outside table range at position {i}")
        row = tables.row(i)
        enc.encode(int(row[idx]), int(row[idx + 1]))
    payload = enc.finish()
    return struct.pack("<I", len(payload)) + payload


def range_decode(segment: bytes, tables: CdfTable, count: int) -> np.ndarray:
    """Inverse of range_encode; consumes only the declared payload."""
    if len(segment) < 4:
        raise BitstreamError("coded segment shorter than its length prefix")
    (length,) = struct.unpack("<I", segment[:4])
    if len(segment) - 4 < length:
        raise BitstreamError(
            f"coded segment declares {length} payload bytes, only {len(segment) - 4} present"
        )
    if count == 0:
        return np.zeros(0, dtype=np.int64)
    dec = RangeDecoder(segment[4 : 4 + length])
    out = np.empty(count, dtype=np.int64)
    for i in range(count):
        out[i] = dec.decode(tables.row(i)) + tables.offset
    return out


def segment_length(segment: bytes) -> int:
    """Total wire size of a segment: prefix plus declared payload."""
    if len(segment) < 4:
        raise BitstreamError("coded segment shorter than its length prefix")
    (length,) = struct.unpack("<I", segment[:4])
    return 4 + length
