"""Append-only record log framing shared by the broker and the repository.

Each record is a 32-bit little-endian payload length, the payload bytes, then a
32-bit CRC32 of the payload. Scanning is forward-only; a record whose CRC does
not match is skipped, and a record that cannot be fully read (truncated tail or
impossible length) ends the scan. Both cases are reported, not raised.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO

_U32 = struct.Struct("<I")
HEADER_SIZE = _U32.size
CRC_SIZE = _U32.size


def append_record(fh: BinaryIO, payload: bytes) -> None:
    fh.write(_U32.pack(len(payload)))
    fh.write(payload)
    fh.write(_U32.pack(zlib.crc32(payload)))


@dataclass(frozen=True)
class SkippedRecord:
    offset: int
    reason: str


@dataclass
class ScanResult:
    records: list[bytes] = field(default_factory=list)
    skipped: list[SkippedRecord] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not self.skipped


def scan_records(path: Path) -> ScanResult:
    """Read every intact record from a log file written by append_record."""
    result = ScanResult()
    data = Path(path).read_bytes()
    size = len(data)
    offset = 0
    while offset < size:
        if offset + HEADER_SIZE > size:
            result.skipped.append(SkippedRecord(offset, "truncated length header"))
            break
        (length,) = _U32.unpack_from(data, offset)
        end = offset + HEADER_SIZE + length + CRC_SIZE
        if end > size:
            result.skipped.append(SkippedRecord(offset, "truncated record body"))
            break
        payload = data[offset + HEADER_SIZE : offset + HEADER_SIZE + length]
        (crc,) = _U32.unpack_from(data, offset + HEADER_SIZE + length)
        if crc != zlib.crc32(payload):
            result.skipped.append(SkippedRecord(offset, "crc mismatch"))
        else:
            result.records.append(payload)
        offset = end
    return result
