"""Public-channel record format.

Every protocol control message rides in a versioned, length-prefixed binary
record so transcripts replay byte for byte:

    offset  size  field
    0       1     version (currently 1)
    1       1     record type (RecordType)
    2       8     frame id, unsigned little-endian
    10      4     payload length, unsigned little-endian
    14      n     payload bytes

The payload layout per type is documented in docs/formats.md.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, List, Tuple

from ..errors import ProtocolError

WIRE_VERSION = 1
_HEADER = struct.Struct("<BBQI")


class RecordType(IntEnum):
    SIFT_DETECTIONS = 1    # receiver -> transmitter: detected slot indices
    SIFT_BASES = 2         # receiver -> transmitter: measurement bases
    SIFT_KEPT = 3          # transmitter -> receiver: kept slot indices
    SARG_ANNOUNCE = 4      # transmitter -> receiver: state-pair announcements
    QBER_SAMPLE = 5        # both: sacrificial sample positions and bits
    CASCADE_PARITY = 6     # reference side: parity bits for one pass
    PA_SEED = 7            # either: privacy-amplification Toeplitz seed
    AUTH_TAG = 8           # either: batched authentication tag for a round
    RELAY_HOP = 9          # relay: one-time-pad ciphertext of the relayed secret
    HEALTH = 10            # telemetry: link health transition
    SESSION_CTRL = 11      # framing: transmitter identity, block boundaries


@dataclass(frozen=True)
class Record:
    rtype: RecordType
    frame_id: int
    payload: bytes
    version: int = WIRE_VERSION


def encode_record(record: Record) -> bytes:
    return _HEADER.pack(record.version, int(record.rtype), record.frame_id,
                        len(record.payload)) + record.payload


def decode_record(buf: bytes, offset: int = 0) -> Tuple[Record, int]:
    """Decode one record starting at ``offset``; returns (record, next_offset)."""
    if offset + _HEADER.size > len(buf):
        raise ProtocolError("truncated record header")
    version, rtype, frame_id, length = _HEADER.unpack_from(buf, offset)
    if version != WIRE_VERSION:
        raise ProtocolError(f"unsupported wire version {version}")
    try:
        rtype = RecordType(rtype)
    except ValueError as exc:
        raise ProtocolError(f"unknown record type {rtype}") from exc
    start = offset + _HEADER.size
    end = start + length
    if end > len(buf):
        raise ProtocolError("truncated record payload")
    return Record(rtype, frame_id, buf[start:end]), end


def encode_records(records: Iterable[Record]) -> bytes:
    return b"".join(encode_record(r) for r in records)


def decode_records(buf: bytes) -> List[Record]:
    records = []
    offset = 0
    while offset < len(buf):
        record, offset = decode_record(buf, offset)
        records.append(record)
    return records
