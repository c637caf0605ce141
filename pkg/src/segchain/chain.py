"""Blocks, segments and the hash links between them.

Every block is encoded with a fixed little-endian layout::

    chain_id[32] | segment_id u64 | level u64 | timestamp u64 |
    predecessor_hash[32] | operations_hash[32] | kind u8 | op_count u32 |
    operation*

and each operation starts with a one-byte tag followed by its body.
Variable byte strings carry a u32 length prefix. The block digest is
SHA-256 over that encoding, and ``operations_hash`` is SHA-256 over the
concatenated operation encodings.
"""

from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence, Union

from .errors import DecodeError, LinkageError, OrderingError, ValidationError

DIGEST_SIZE = 32
ID_SIZE = 8  # account ids and contract ids

_HEADER = struct.Struct("<32sQQQ32s32sBI")
HEADER_SIZE = _HEADER.size  # 125
_TX_FIXED = struct.Struct("<B8s8sQI")  # tag, source, destination, value, description length
_UPDATE_FIXED = struct.Struct("<B8sI")  # tag, contract id, state length
_SNAPSHOT_FIXED = struct.Struct("<BI")  # tag, entry count
_ENTRY_FIXED = struct.Struct("<8sI")  # contract id, state length
TX_OVERHEAD = _TX_FIXED.size  # 29
UPDATE_OVERHEAD = _UPDATE_FIXED.size  # 13
SNAPSHOT_OVERHEAD = _SNAPSHOT_FIXED.size  # 5
ENTRY_OVERHEAD = _ENTRY_FIXED.size  # 12

_U64_MAX = 2**64 - 1
_U32_MAX = 2**32 - 1


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


class BlockKind(enum.IntEnum):
    ACTIVATION = 0
    REINJECTION = 1
    PAYLOAD = 2


class OpTag(enum.IntEnum):
    TRANSACTION = 0
    CONTRACT_UPDATE = 1
    CONTRACT_SNAPSHOT = 2


def kind_for_level(level: int) -> BlockKind:
    if level == 0:
        return BlockKind.ACTIVATION
    if level == 1:
        return BlockKind.REINJECTION
    return BlockKind.PAYLOAD


# -- operations ---------------------------------------------------------------


@dataclass(frozen=True)
class Transaction:
    source: bytes
    destination: bytes
    value: int
    description: bytes

    def encode(self) -> bytes:
        _check_width(self.source, ID_SIZE, "source")
        _check_width(self.destination, ID_SIZE, "destination")
        _check_uint(self.value, _U64_MAX, "value")
        _check_uint(len(self.description), _U32_MAX, "description")
        return _TX_FIXED.pack(OpTag.TRANSACTION, self.source, self.destination,
                              self.value, len(self.description)) + self.description


@dataclass(frozen=True)
class ContractUpdate:
    contract_id: bytes
    new_state: bytes

    def encode(self) -> bytes:
        _check_width(self.contract_id, ID_SIZE, "contract_id")
        _check_uint(len(self.new_state), _U32_MAX, "new_state")
        return _UPDATE_FIXED.pack(OpTag.CONTRACT_UPDATE, self.contract_id,
                                  len(self.new_state)) + self.new_state

    @property
    def state_delta_bytes(self) -> int:
        """Encoded size of the (contract_id, new_state) pair."""
        return ENTRY_OVERHEAD + len(self.new_state)


@dataclass(frozen=True)
class ContractSnapshot:
    entries: tuple[tuple[bytes, bytes], ...] = ()

    def encode(self) -> bytes:
        ids = [cid for cid, _ in self.entries]
        if ids != sorted(set(ids)):
            raise ValidationError("snapshot entries must be sorted by contract id without duplicates",
                                  field="entries")
        parts = [_SNAPSHOT_FIXED.pack(OpTag.CONTRACT_SNAPSHOT, len(self.entries))]
        for cid, state in self.entries:
            _check_width(cid, ID_SIZE, "contract_id")
            _check_uint(len(state), _U32_MAX, "state")
            parts.append(_ENTRY_FIXED.pack(cid, len(state)))
            parts.append(state)
        return b"".join(parts)


Operation = Union[Transaction, ContractUpdate, ContractSnapshot]


def operations_digest(operations: Sequence[Operation]) -> bytes:
    return sha256(b"".join(op.encode() for op in operations))


# -- blocks -------------------------------------------------------------------


@dataclass(frozen=True)
class BlockHeader:
    chain_id: bytes
    segment_id: int
    level: int
    timestamp: int
    predecessor_hash: bytes
    operations_hash: bytes
    kind: BlockKind

    def check(self) -> None:
        """Raise ValidationError unless every header invariant holds."""
        where = dict(segment_id=self.segment_id, level=self.level)
        _check_width(self.chain_id, DIGEST_SIZE, "chain_id", **where)
        _check_width(self.predecessor_hash, DIGEST_SIZE, "predecessor_hash", **where)
        _check_width(self.operations_hash, DIGEST_SIZE, "operations_hash", **where)
        for name in ("segment_id", "level", "timestamp"):
            _check_uint(getattr(self, name), _U64_MAX, name, **where)
        if self.segment_id < 1:
            raise ValidationError("segment ids start at 1", field="segment_id", **where)
        if self.kind != kind_for_level(self.level):
            raise ValidationError(f"level {self.level} requires kind "
                                  f"{kind_for_level(self.level).name}, got {BlockKind(self.kind).name}",
                                  field="kind", **where)


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    operations: tuple[Operation, ...] = ()

    @cached_property
    def encoded(self) -> bytes:
        h = self.header
        h.check()
        where = dict(segment_id=h.segment_id, level=h.level)
        if h.kind == BlockKind.ACTIVATION and self.operations:
            raise ValidationError("activation blocks carry no operations", field="operations", **where)
        if h.kind == BlockKind.REINJECTION and (
                len(self.operations) != 1 or not isinstance(self.operations[0], ContractSnapshot)):
            raise ValidationError("reinjection blocks carry exactly one contract snapshot",
                                  field="operations", **where)
        if h.kind == BlockKind.PAYLOAD and any(isinstance(op, ContractSnapshot) for op in self.operations):
            raise ValidationError("payload blocks may not carry contract snapshots",
                                  field="operations", **where)
        _check_uint(len(self.operations), _U32_MAX, "op_count", **where)
        head = _HEADER.pack(h.chain_id, h.segment_id, h.level, h.timestamp, h.predecessor_hash,
                            h.operations_hash, int(h.kind), len(self.operations))
        return head + self.encoded_operations

    @cached_property
    def encoded_operations(self) -> bytes:
        return b"".join(op.encode() for op in self.operations)

    @cached_property
    def digest(self) -> bytes:
        return sha256(self.encoded)

    @property
    def kind(self) -> BlockKind:
        return self.header.kind

    @property
    def segment_id(self) -> int:
        return self.header.segment_id

    @property
    def level(self) -> int:
        return self.header.level

    def operations_match(self) -> bool:
        return sha256(self.encoded_operations) == self.header.operations_hash


def canonical_serialize_block(block: Block) -> bytes:
    return block.encoded


def hash_block(block: Block) -> bytes:
    return block.digest


# -- decoding -----------------------------------------------------------------


def decode_block(data: bytes, offset: int = 0) -> tuple[Block, int]:
    """Parse one block starting at ``offset``; return it and the next offset."""
    view = memoryview(data)
    if len(data) - offset < HEADER_SIZE:
        raise DecodeError(f"truncated block header at offset {offset}")
    (chain_id, segment_id, level, timestamp, pred, ops_hash,
     kind, op_count) = _HEADER.unpack_from(data, offset)
    try:
        kind = BlockKind(kind)
    except ValueError:
        raise DecodeError(f"unknown block kind {kind} at offset {offset}") from None
    pos = offset + HEADER_SIZE
    ops = []
    for _ in range(op_count):
        op, pos = _decode_operation(view, pos)
        ops.append(op)
    header = BlockHeader(chain_id, segment_id, level, timestamp, pred, ops_hash, kind)
    return Block(header, tuple(ops)), pos


def decode_blocks(data: bytes, count: int, offset: int = 0) -> tuple[list[Block], int]:
    blocks = []
    for _ in range(count):
        block, offset = decode_block(data, offset)
        blocks.append(block)
    return blocks, offset


def deserialize_block(data: bytes) -> Block:
    block, end = decode_block(data)
    if end != len(data):
        raise DecodeError(f"{len(data) - end} trailing bytes after block")
    return block


def _take(view: memoryview, pos: int, n: int) -> tuple[bytes, int]:
    if pos + n > len(view):
        raise DecodeError(f"truncated field at offset {pos}")
    return bytes(view[pos:pos + n]), pos + n


def _decode_operation(view: memoryview, pos: int) -> tuple[Operation, int]:
    if pos >= len(view):
        raise DecodeError(f"truncated operation at offset {pos}")
    tag = view[pos]
    if tag == OpTag.TRANSACTION:
        raw, pos = _take(view, pos, TX_OVERHEAD)
        _, src, dst, value, n = _TX_FIXED.unpack(raw)
        desc, pos = _take(view, pos, n)
        return Transaction(src, dst, value, desc), pos
    if tag == OpTag.CONTRACT_UPDATE:
        raw, pos = _take(view, pos, UPDATE_OVERHEAD)
        _, cid, n = _UPDATE_FIXED.unpack(raw)
        state, pos = _take(view, pos, n)
        return ContractUpdate(cid, state), pos
    if tag == OpTag.CONTRACT_SNAPSHOT:
        raw, pos = _take(view, pos, SNAPSHOT_OVERHEAD)
        _, count = _SNAPSHOT_FIXED.unpack(raw)
        entries = []
        for _ in range(count):
            raw, pos = _take(view, pos, ENTRY_OVERHEAD)
            cid, n = _ENTRY_FIXED.unpack(raw)
            state, pos = _take(view, pos, n)
            entries.append((cid, state))
        return ContractSnapshot(tuple(entries)), pos
    raise DecodeError(f"unknown operation tag {tag} at offset {pos}")


# -- chain-level types --------------------------------------------------------


def genesis_hash(chain_id: bytes) -> bytes:
    return sha256(b"GENESIS" + chain_id)


@dataclass(frozen=True)
class ChainConfig:
    chain_id: bytes
    blocks_per_segment: int = 10
    genesis_public_key: bytes | None = None

    def __post_init__(self):
        _check_width(self.chain_id, DIGEST_SIZE, "chain_id")
        if self.blocks_per_segment < 3:
            raise ValidationError("blocks_per_segment must be at least 3", field="blocks_per_segment")

    @property
    def genesis_hash(self) -> bytes:
        return genesis_hash(self.chain_id)

    @property
    def blocks_per_full_segment(self) -> int:
        return self.blocks_per_segment + 2


@dataclass
class Segment:
    segment_id: int
    blocks: list[Block] = field(default_factory=list)

    @property
    def head(self) -> Block:
        return self.blocks[-1]

    @property
    def payload_count(self) -> int:
        return max(0, len(self.blocks) - 2)

    @property
    def serialized_size(self) -> int:
        return sum(len(b.encoded) for b in self.blocks)

    def copy(self) -> Segment:
        return Segment(self.segment_id, list(self.blocks))


@dataclass
class ContractRegistry:
    entries: dict[bytes, bytes] = field(default_factory=dict)

    def apply(self, op: Operation) -> None:
        if isinstance(op, ContractUpdate):
            self.entries[op.contract_id] = op.new_state

    def snapshot(self) -> ContractSnapshot:
        return ContractSnapshot(tuple(sorted(self.entries.items())))

    @classmethod
    def from_snapshot(cls, snap: ContractSnapshot) -> ContractRegistry:
        ids = [cid for cid, _ in snap.entries]
        if ids != sorted(set(ids)):
            raise DecodeError("malformed contract snapshot: entries not in canonical order")
        return cls(dict(snap.entries))

    def copy(self) -> ContractRegistry:
        return ContractRegistry(dict(self.entries))


# -- constructors -------------------------------------------------------------


def build_activation_block(config: ChainConfig, segment_id: int, predecessor_segment_hash: bytes,
                           timestamp: int) -> Block:
    if segment_id < 1:
        raise ValidationError("segment ids start at 1", field="segment_id")
    if segment_id == 1 and predecessor_segment_hash != config.genesis_hash:
        raise LinkageError(config.genesis_hash, predecessor_segment_hash, segment_id=1)
    header = BlockHeader(config.chain_id, segment_id, 0, timestamp, predecessor_segment_hash,
                         operations_digest(()), BlockKind.ACTIVATION)
    block = Block(header)
    block.encoded  # surface invariant violations now
    return block


def build_reinjection_block(prev_registry: ContractRegistry, activation: Block, timestamp: int) -> Block:
    if activation.kind != BlockKind.ACTIVATION:
        raise ValidationError("reinjection must follow an activation block", level=activation.level)
    ops = (prev_registry.snapshot(),)
    a = activation.header
    header = BlockHeader(a.chain_id, a.segment_id, 1, timestamp, activation.digest,
                         operations_digest(ops), BlockKind.REINJECTION)
    return Block(header, ops)


def start_segment(config: ChainConfig, segment_id: int, predecessor_segment_hash: bytes,
                  registry: ContractRegistry, timestamp: int) -> Segment:
    activation = build_activation_block(config, segment_id, predecessor_segment_hash, timestamp)
    reinjection = build_reinjection_block(registry, activation, timestamp)
    return Segment(segment_id, [activation, reinjection])


def append_payload_block(segment: Segment, operations: Iterable[Operation], timestamp: int) -> Block:
    if len(segment.blocks) < 2:
        raise ValidationError("segment needs its activation and reinjection blocks first",
                              segment_id=segment.segment_id)
    ops = tuple(operations)
    if any(isinstance(op, ContractSnapshot) for op in ops):
        raise ValidationError("payload blocks may not carry contract snapshots",
                              segment_id=segment.segment_id, level=len(segment.blocks), field="operations")
    prev = segment.head
    header = BlockHeader(prev.header.chain_id, segment.segment_id, len(segment.blocks), timestamp,
                         prev.digest, operations_digest(ops), BlockKind.PAYLOAD)
    block = Block(header, ops)
    block.encoded
    segment.blocks.append(block)
    return block


# -- validation ---------------------------------------------------------------


def check_block(block: Block) -> None:
    """Structural invariants plus the operations digest of a single block."""
    block.encoded
    if not block.operations_match():
        raise ValidationError("operations_hash mismatch", segment_id=block.segment_id,
                              level=block.level, field="operations_hash")


def validate_segment(segment: Segment) -> None:
    """Raise ValidationError at the first block that breaks a segment invariant."""
    sid = segment.segment_id
    if not segment.blocks:
        raise ValidationError("segment has no blocks", segment_id=sid)
    first = segment.blocks[0]
    chain_id = first.header.chain_id
    prev: Block | None = None
    for i, block in enumerate(segment.blocks):
        h = block.header
        if h.segment_id != sid:
            raise ValidationError(f"block belongs to segment {h.segment_id}", segment_id=sid, level=i,
                                  field="segment_id")
        if h.level != i:
            raise ValidationError(f"expected level {i}, found {h.level}", segment_id=sid, level=i,
                                  field="level")
        if h.chain_id != chain_id:
            raise ValidationError("chain id differs within segment", segment_id=sid, level=i,
                                  field="chain_id")
        check_block(block)
        if prev is not None:
            if h.predecessor_hash != prev.digest:
                raise ValidationError("predecessor mismatch", segment_id=sid, level=i,
                                      field="predecessor_hash")
            if h.timestamp < prev.header.timestamp:
                raise ValidationError("timestamp decreases", segment_id=sid, level=i, field="timestamp")
        prev = block


def verify_linkage(prev_segment_last_block_hash: bytes, next_activation: Block,
                   prev_segment_id: int | None = None) -> None:
    if next_activation.kind != BlockKind.ACTIVATION:
        raise ValidationError("linkage target is not an activation block",
                              segment_id=next_activation.segment_id, level=next_activation.level)
    if prev_segment_id is not None and next_activation.segment_id != prev_segment_id + 1:
        raise OrderingError(f"segment {next_activation.segment_id} cannot follow segment {prev_segment_id}")
    if next_activation.header.predecessor_hash != prev_segment_last_block_hash:
        raise LinkageError(prev_segment_last_block_hash, next_activation.header.predecessor_hash,
                           segment_id=next_activation.segment_id)


def verify_segment_range(segments: Sequence[Segment], chain_id: bytes) -> None:
    """Validate each segment and the links between neighbours.

    Unlike :func:`verify_full_chain` the range need not start at segment 1.
    """
    prev: Segment | None = None
    for seg in segments:
        validate_segment(seg)
        if seg.blocks[0].header.chain_id != chain_id:
            raise ValidationError("foreign chain id", segment_id=seg.segment_id, level=0, field="chain_id")
        if prev is not None:
            if len(prev.blocks) < 2:
                raise ValidationError("closed segment lacks its reinjection block",
                                      segment_id=prev.segment_id)
            verify_linkage(prev.head.digest, seg.blocks[0], prev.segment_id)
        prev = seg


def verify_full_chain(segments: Sequence[Segment], config: ChainConfig,
                      trusted_head: bytes | None = None) -> None:
    """Check a chain from segment 1 to its head; raise on the first failure.

    With ``trusted_head`` the digest of the final block must also match,
    which covers the one field (the head's timestamp) that nothing else
    commits to.
    """
    if not segments:
        return
    first = segments[0]
    if first.segment_id != 1:
        raise OrderingError(f"chain must start at segment 1, found {first.segment_id}")
    verify_segment_range(segments, config.chain_id)
    verify_linkage(config.genesis_hash, first.blocks[0])
    if trusted_head is not None and segments[-1].head.digest != trusted_head:
        raise LinkageError(trusted_head, segments[-1].head.digest, segment_id=segments[-1].segment_id)


def replay_contracts(segment: Segment) -> ContractRegistry:
    if len(segment.blocks) < 2:
        raise DecodeError(f"segment {segment.segment_id} has no reinjection block")
    snap_ops = segment.blocks[1].operations
    if len(snap_ops) != 1 or not isinstance(snap_ops[0], ContractSnapshot):
        raise DecodeError(f"segment {segment.segment_id} reinjection block holds no snapshot")
    registry = ContractRegistry.from_snapshot(snap_ops[0])
    for block in segment.blocks[2:]:
        for op in block.operations:
            registry.apply(op)
    return registry


def _check_width(value: bytes, width: int, name: str, **where) -> None:
    if not isinstance(value, (bytes, bytearray)) or len(value) != width:
        raise ValidationError(f"{name} must be exactly {width} bytes", field=name, **where)


def _check_uint(value: int, limit: int, name: str, **where) -> None:
    if not isinstance(value, int) or value < 0 or value > limit:
        raise ValidationError(f"{name} out of range: {value!r}", field=name, **where)
