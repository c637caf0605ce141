"""Snapshot export/import and the on-disk snapshot and segment file formats.

Snapshot file::

    "SNAP" | version u8 | chain_id[32] | first_segment u64 | last_segment u64 |
    head_hash[32] | (block_count u32 | block bytes...) per segment

Segment file::

    "SEGC" | version u8 | chain_id[32] | segment_id u64 | block_count u32 | block bytes...
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

from .chain import Segment, decode_blocks, genesis_hash, verify_linkage, verify_segment_range
from .errors import (
    AvailabilityError,
    DecodeError,
    IntegrityError,
    OrderingError,
    ProvenanceError,
    ValidationError,
)
from .retention import ModeKind, NodeStore, RetentionMode

LAYOUT_VERSION = 0x01
SNAPSHOT_MAGIC = b"SNAP"
SEGMENT_MAGIC = b"SEGC"
PREAMBLE_SIZE = 5  # magic + version
_SNAP_HEAD = struct.Struct("<4sB32sQQ32s")
_SEG_HEAD = struct.Struct("<4sB32sQI")
SEGMENT_FILE_HEADER_SIZE = _SEG_HEAD.size
_COUNT = struct.Struct("<I")

_EXPORTABLE = (ModeKind.ARCHIVE, ModeKind.FULL, ModeKind.SEGMENTED_COLD)


@dataclass
class Snapshot:
    chain_id: bytes
    first_segment: int
    last_segment: int
    head_hash: bytes
    segments: list[Segment] = field(default_factory=list)

    @property
    def segment_range(self) -> tuple[int, int]:
        return (self.first_segment, self.last_segment)


def export_snapshot(store: NodeStore, first: int, last: int) -> Snapshot:
    if store.mode.kind not in _EXPORTABLE:
        raise AvailabilityError(f"{store.mode.label} stores cannot export snapshots")
    if first < 1 or last < first:
        raise OrderingError(f"bad segment range {first}..{last}")
    segments = []
    for sid in range(first, last + 1):
        if not store.is_fully_retained(sid):
            raise AvailabilityError(f"segment {sid} is not fully retained")
        segments.append(store.segment(sid))
    chain_id = segments[0].blocks[0].header.chain_id
    verify_segment_range(segments, chain_id)
    return Snapshot(chain_id, first, last, segments[-1].head.digest, segments)


def import_snapshot(snapshot: Snapshot, trusted_head: bytes | None = None,
                    mode: RetentionMode | None = None) -> NodeStore:
    """Recompute every hash and link; optionally pin the head to a trusted digest.

    Without ``trusted_head`` the store is returned with
    ``provenance_verified = False``: the data is self-consistent but may
    belong to another chain.
    """
    segs = snapshot.segments
    ids = [s.segment_id for s in segs]
    if ids != list(range(snapshot.first_segment, snapshot.last_segment + 1)):
        raise IntegrityError(f"snapshot segments {ids} do not cover "
                             f"{snapshot.first_segment}..{snapshot.last_segment}")
    try:
        verify_segment_range(segs, snapshot.chain_id)
        if snapshot.first_segment == 1:
            verify_linkage(genesis_hash(snapshot.chain_id), segs[0].blocks[0])
    except (ValidationError, OrderingError) as err:
        raise IntegrityError(str(err)) from err
    if segs[-1].head.digest != snapshot.head_hash:
        raise IntegrityError("recorded head hash does not match the last block")
    if trusted_head is not None and snapshot.head_hash != trusted_head:
        raise ProvenanceError(f"snapshot head {snapshot.head_hash.hex()} is not the trusted head "
                              f"{trusted_head.hex()}")
    store = NodeStore(mode or RetentionMode.segmented_cold())
    for seg in segs:
        for block in seg.blocks:
            store.ingest_block(block)
    store.provenance_verified = trusted_head is not None
    return store


# -- files --------------------------------------------------------------------


def encode_snapshot(snapshot: Snapshot) -> bytes:
    parts = [_SNAP_HEAD.pack(SNAPSHOT_MAGIC, LAYOUT_VERSION, snapshot.chain_id, snapshot.first_segment,
                             snapshot.last_segment, snapshot.head_hash)]
    for seg in snapshot.segments:
        parts.append(_COUNT.pack(len(seg.blocks)))
        parts.extend(b.encoded for b in seg.blocks)
    return b"".join(parts)


def decode_snapshot(data: bytes) -> Snapshot:
    if len(data) < _SNAP_HEAD.size:
        raise DecodeError("truncated snapshot header")
    magic, version, chain_id, first, last, head = _SNAP_HEAD.unpack_from(data)
    _check_preamble(magic, version, SNAPSHOT_MAGIC)
    if last < first or first < 1:
        raise DecodeError(f"bad snapshot range {first}..{last}")
    pos = _SNAP_HEAD.size
    segments = []
    for sid in range(first, last + 1):
        if pos + _COUNT.size > len(data):
            raise DecodeError(f"truncated snapshot at segment {sid}")
        (count,) = _COUNT.unpack_from(data, pos)
        blocks, pos = decode_blocks(data, count, pos + _COUNT.size)
        segments.append(Segment(blocks[0].segment_id if blocks else sid, blocks))
    if pos != len(data):
        raise DecodeError(f"{len(data) - pos} trailing bytes in snapshot")
    return Snapshot(chain_id, first, last, head, segments)


def write_snapshot(snapshot: Snapshot, path: str | Path) -> Path:
    path = Path(path)
    path.write_bytes(encode_snapshot(snapshot))
    return path


def read_snapshot(path: str | Path) -> Snapshot:
    return decode_snapshot(Path(path).read_bytes())


@dataclass
class SegmentFile:
    chain_id: bytes
    segment: Segment


def encode_segment_file(segment: Segment, chain_id: bytes | None = None) -> bytes:
    if chain_id is None:
        chain_id = segment.blocks[0].header.chain_id
    head = _SEG_HEAD.pack(SEGMENT_MAGIC, LAYOUT_VERSION, chain_id, segment.segment_id, len(segment.blocks))
    return head + b"".join(b.encoded for b in segment.blocks)


def decode_segment_file(data: bytes) -> SegmentFile:
    if len(data) < _SEG_HEAD.size:
        raise DecodeError("truncated segment file header")
    magic, version, chain_id, sid, count = _SEG_HEAD.unpack_from(data)
    _check_preamble(magic, version, SEGMENT_MAGIC)
    blocks, end = decode_blocks(data, count, _SEG_HEAD.size)
    if end != len(data):
        raise DecodeError(f"{len(data) - end} trailing bytes in segment file")
    return SegmentFile(chain_id, Segment(sid, blocks))


def segment_filename(segment_id: int) -> str:
    return f"segment-{segment_id:06d}.segc"


def persist_segment(segment: Segment, directory: str | Path) -> Path:
    directory = Path(directory)
    path = directory / segment_filename(segment.segment_id)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_segment_file(segment))
    except OSError as err:
        raise OSError(f"cannot write segment file {path}: {err}") from err
    return path


def read_segment_file(path: str | Path) -> SegmentFile:
    return decode_segment_file(Path(path).read_bytes())


def _check_preamble(magic: bytes, version: int, expected: bytes) -> None:
    if magic != expected:
        raise DecodeError(f"bad magic {magic!r}, expected {expected!r}")
    if version != LAYOUT_VERSION:
        raise DecodeError(f"unsupported layout version {version}")
