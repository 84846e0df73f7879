"""Bitstream container: a fixed header plus length-prefixed frame records.

Layout (little endian):
  magic "NVC1" | version u16 | width u16 | height u16 | padded width u16 |
  padded height u16 | GOP u8 | frame count u32 | model hash 8 bytes
then per frame:
  type byte ("I" or "P") | payload length u32 | payload
An intra payload is one intra code; an inter payload is a flow code tagged
"F" followed by a residual code tagged "R". Record framing lets a decoder
stop cleanly at the first corrupted group without touching earlier frames.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .errors import BitstreamError

MAGIC = b"NVC1"
VERSION = 1
HEADER_LEN = 4 + 2 + 2 + 2 + 2 + 2 + 1 + 4 + 8

FRAME_INTRA = 0x49  # "I"
FRAME_INTER = 0x50  # "P"
SEGMENT_FLOW = 0x46  # "F"
SEGMENT_RESIDUAL = 0x52  # "R"


@dataclass
class ContainerHeader:
    width: int
    height: int
    padded_width: int
    padded_height: int
    gop: int
    frame_count: int
    model_hash: bytes

    def pack(self) -> bytes:
        if len(self.model_hash) != 8:
            raise BitstreamError("model hash must be 8 bytes")
        return (MAGIC + struct.pack("<HHHHHBI", VERSION, self.width, self.height,
                                    self.padded_width, self.padded_height,
                                    self.gop, self.frame_count)
                + self.model_hash)

    @classmethod
    def unpack(cls, blob: bytes) -> "ContainerHeader":
        if len(blob) < HEADER_LEN:
            raise BitstreamError(
                f"container truncated at byte {len(blob)}: header needs {HEADER_LEN}"
            )
        if blob[:4] != MAGIC:
            raise BitstreamError(f"bad container magic {blob[:4]!r} at byte 0")
        version, width, height, pw, ph, gop, count = struct.unpack_from("<HHHHHBI", blob, 4)
        if version != VERSION:
            raise BitstreamError(f"unsupported container version {version} at byte 4")
        return cls(width, height, pw, ph, gop, count, blob[HEADER_LEN - 8 : HEADER_LEN])


def pack_frame_record(frame_type: int, payload: bytes) -> bytes:
    return struct.pack("<BI", frame_type, len(payload)) + payload


def iter_frame_records(blob: bytes, offset: int = HEADER_LEN):
    """Yields (frame_type, payload, record_offset); validates framing."""
    pos = offset
    while pos < len(blob):
        if pos + 5 > len(blob):
            raise BitstreamError(f"container truncated at byte {pos}: record header")
        frame_type, length = struct.unpack_from("<BI", blob, pos)
        if frame_type not in (FRAME_INTRA, FRAME_INTER):
            raise BitstreamError(f"unknown frame type 0x{frame_type:02x} at byte {pos}")
        start = pos + 5
        if start + length > len(blob):
            raise BitstreamError(
                f"container truncated at byte {len(blob)}: record at {pos} "
                f"declares {length} bytes"
            )
        yield frame_type, blob[start : start + length], pos
        pos = start + length


def pack_inter_payload(flow_blob: bytes, residual_blob: bytes) -> bytes:
    return bytes([SEGMENT_FLOW]) + flow_blob + bytes([SEGMENT_RESIDUAL]) + residual_blob
