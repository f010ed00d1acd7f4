"""Bit-exact serialization of object sets and multi-scan maps.

Scan record layout (extension ``.cor``):
    magic "COLM" | version u8 | object count u16 LE |
    per object: centroid x, y, z as f32 LE, then 1 class byte.

Map layout (extension ``.cormap``): a sequence of entries
    scan id u32 LE | pose as 12 f64 LE (row-major [R | t]) | scan record
with strictly increasing scan ids.

Centroids are stored in float32; everything in memory stays float64, so a
decode(encode(x)) roundtrip equals x up to single-precision quantization.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ColmError, ObjectSet, RigidTransform

MAGIC = b"COLM"
VERSION = 1
HEADER_BYTES = 7
OBJECT_BYTES = 13
MAX_OBJECTS = 0xFFFF

_POSE_BYTES = 12 * 8
_ENTRY_HEAD = struct.Struct("<I")


class CodecError(ColmError):
    """Base class for serialization errors."""


class CorruptMagicError(CodecError):
    pass


class VersionMismatchError(CodecError):
    pass


class TruncationError(CodecError):
    pass


class ScanOverflowError(CodecError):
    pass


class MapOrderError(CodecError):
    pass


class EmptyMapError(CodecError):
    pass


# ----------------------------- scan records ---------------------------------


def encode_scan(objects: ObjectSet) -> bytes:
    """Serialize an object set; output length is exactly 7 + 13 n bytes."""
    n = len(objects)
    if n > MAX_OBJECTS:
        raise ScanOverflowError(f"{n} objects exceed the u16 limit of {MAX_OBJECTS}")
    header = MAGIC + struct.pack("<BH", VERSION, n)
    body = np.empty((n, OBJECT_BYTES), dtype=np.uint8)
    body[:, :12] = (
        objects.centroids.astype("<f4").view(np.uint8).reshape(n, 12)
    )
    body[:, 12] = objects.classes
    return header + body.tobytes()


def decode_scan(data: bytes) -> ObjectSet:
    if len(data) < HEADER_BYTES:
        raise TruncationError(
            f"expected at least {HEADER_BYTES} header bytes, got {len(data)}"
        )
    if data[:4] != MAGIC:
        raise CorruptMagicError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    version, count = struct.unpack_from("<BH", data, 4)
    if version != VERSION:
        raise VersionMismatchError(f"unsupported version {version}, expected {VERSION}")
    expected = HEADER_BYTES + OBJECT_BYTES * count
    if len(data) != expected:
        raise TruncationError(f"expected {expected} bytes for {count} objects, got {len(data)}")
    body = np.frombuffer(data, dtype=np.uint8, offset=HEADER_BYTES).reshape(
        count, OBJECT_BYTES
    )
    centroids = body[:, :12].copy().view("<f4").astype(np.float64).reshape(count, 3)
    return ObjectSet(centroids, body[:, 12].copy())


def scan_record_bytes(n_objects: int) -> int:
    return HEADER_BYTES + OBJECT_BYTES * n_objects


# ----------------------------- map files ------------------------------------


@dataclass(frozen=True)
class MapEntry:
    scan_id: int
    pose: RigidTransform
    objects: ObjectSet

    def __post_init__(self) -> None:
        if not 0 <= self.scan_id <= 0xFFFFFFFF:
            raise ValueError(f"scan id {self.scan_id} outside u32 range")


@dataclass(frozen=True)
class MapFile:
    entries: tuple[MapEntry, ...]

    def __post_init__(self) -> None:
        entries = tuple(self.entries)
        ids = [e.scan_id for e in entries]
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise MapOrderError(f"scan ids must be strictly increasing, got {ids}")
        object.__setattr__(self, "entries", entries)

    def __len__(self) -> int:
        return len(self.entries)


def encode_map(map_file: MapFile) -> bytes:
    chunks: list[bytes] = []
    for entry in map_file.entries:
        chunks.append(_ENTRY_HEAD.pack(entry.scan_id))
        chunks.append(entry.pose.to_flat().astype("<f8").tobytes())
        chunks.append(encode_scan(entry.objects))
    return b"".join(chunks)


def decode_map(data: bytes) -> MapFile:
    entries: list[MapEntry] = []
    offset = 0
    total = len(data)
    while offset < total:
        fixed = _ENTRY_HEAD.size + _POSE_BYTES + HEADER_BYTES
        if total - offset < fixed:
            raise TruncationError(
                f"map entry at offset {offset} needs {fixed} bytes, "
                f"only {total - offset} remain"
            )
        (scan_id,) = _ENTRY_HEAD.unpack_from(data, offset)
        offset += _ENTRY_HEAD.size
        pose_flat = np.frombuffer(data, dtype="<f8", count=12, offset=offset)
        offset += _POSE_BYTES
        count = struct.unpack_from("<H", data, offset + 5)[0]
        record_len = scan_record_bytes(count)
        if total - offset < record_len:
            raise TruncationError(
                f"scan record at offset {offset} needs {record_len} bytes, "
                f"only {total - offset} remain"
            )
        objects = decode_scan(data[offset : offset + record_len])
        offset += record_len
        entries.append(MapEntry(scan_id, RigidTransform.from_flat(pose_flat), objects))
    return MapFile(tuple(entries))


def write_scan(path, objects: ObjectSet) -> int:
    data = encode_scan(objects)
    Path(path).write_bytes(data)
    return len(data)


def read_scan(path) -> ObjectSet:
    return decode_scan(Path(path).read_bytes())


def write_map(path, map_file: MapFile) -> int:
    data = encode_map(map_file)
    Path(path).write_bytes(data)
    return len(data)


def read_map(path) -> MapFile:
    return decode_map(Path(path).read_bytes())


# ----------------------------- storage accounting ---------------------------


@dataclass(frozen=True)
class StorageReport:
    scans: int
    total_record_bytes: int
    mean_record_bytes: float
    mean_payload_bytes: float
    mean_objects: float
    max_objects: int
    compression_ratio: float | None

    def lines(self) -> list[str]:
        out = [
            f"scans={self.scans}",
            f"total_record_bytes={self.total_record_bytes}",
            f"mean_record_bytes={self.mean_record_bytes:.2f}",
            f"mean_payload_bytes={self.mean_payload_bytes:.2f}",
            f"mean_objects={self.mean_objects:.2f}",
            f"max_objects={self.max_objects}",
        ]
        if self.compression_ratio is not None:
            out.append(f"compression_ratio={self.compression_ratio:.1f}")
        return out


def storage_report(map_file: MapFile, raw_point_count: int | None = None) -> StorageReport:
    """Storage statistics over record sizes.

    The compression ratio compares against 16-byte-per-point raw scans at the
    supplied total point count: ratio = raw_point_count * 16 / record bytes.
    """
    if len(map_file) == 0:
        raise EmptyMapError("storage report over an empty map")
    counts = np.array([len(e.objects) for e in map_file.entries], dtype=np.int64)
    record = HEADER_BYTES + OBJECT_BYTES * counts
    total = int(record.sum())
    ratio = None
    if raw_point_count is not None:
        ratio = raw_point_count * 16 / total
    return StorageReport(
        scans=len(map_file),
        total_record_bytes=total,
        mean_record_bytes=float(record.mean()),
        mean_payload_bytes=float((OBJECT_BYTES * counts).mean()),
        mean_objects=float(counts.mean()),
        max_objects=int(counts.max()),
        compression_ratio=ratio,
    )
