"""History-retention policies and byte-level storage accounting.

A store records every block it ingests as three footprint components
(header, operations, state delta) and prunes them according to its mode.
``measured_bytes`` is the sum of the components still held plus one
header per accumulated checkpoint.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .chain import HEADER_SIZE, Block, BlockHeader, BlockKind, ContractUpdate, Segment
from .errors import ConfigError, OrderingError


class ModeKind(enum.Enum):
    ARCHIVE = "archive"
    FULL = "full"
    ROLLING = "rolling"
    SEGMENTED_COMPUTE = "segmented-compute"
    SEGMENTED_COLD = "segmented-cold"


DEFAULT_CHECKPOINT_INTERVAL = 10


@dataclass(frozen=True)
class RetentionMode:
    kind: ModeKind
    checkpoint_interval: int = DEFAULT_CHECKPOINT_INTERVAL

    def __post_init__(self):
        if self.checkpoint_interval < 1:
            raise ConfigError("checkpoint_interval must be >= 1")

    @classmethod
    def archive(cls) -> RetentionMode:
        return cls(ModeKind.ARCHIVE)

    @classmethod
    def full(cls, checkpoint_interval: int = DEFAULT_CHECKPOINT_INTERVAL) -> RetentionMode:
        return cls(ModeKind.FULL, checkpoint_interval)

    @classmethod
    def rolling(cls, checkpoint_interval: int = DEFAULT_CHECKPOINT_INTERVAL) -> RetentionMode:
        return cls(ModeKind.ROLLING, checkpoint_interval)

    @classmethod
    def segmented_compute(cls) -> RetentionMode:
        return cls(ModeKind.SEGMENTED_COMPUTE)

    @classmethod
    def segmented_cold(cls) -> RetentionMode:
        return cls(ModeKind.SEGMENTED_COLD)

    @classmethod
    def parse(cls, text: str, checkpoint_interval: int = DEFAULT_CHECKPOINT_INTERVAL) -> RetentionMode:
        try:
            kind = ModeKind(text.strip().lower())
        except ValueError:
            raise ConfigError(f"unknown retention mode {text!r}") from None
        return cls(kind, checkpoint_interval)

    @property
    def label(self) -> str:
        return self.kind.value

    @property
    def uses_checkpoints(self) -> bool:
        return self.kind in (ModeKind.FULL, ModeKind.ROLLING)


@dataclass(frozen=True)
class BlockFootprint:
    header_bytes: int
    operations_bytes: int
    state_delta_bytes: int

    @classmethod
    def of(cls, block: Block) -> BlockFootprint:
        ops_len = len(block.encoded_operations)
        state = sum(op.state_delta_bytes for op in block.operations if isinstance(op, ContractUpdate))
        return cls(len(block.encoded) - ops_len, ops_len, state)


@dataclass
class StoredBlock:
    block: Block
    footprint: BlockFootprint
    height: int
    keep_operations: bool = True
    keep_state: bool = True

    @property
    def retained_bytes(self) -> int:
        fp = self.footprint
        return (fp.header_bytes
                + (fp.operations_bytes if self.keep_operations else 0)
                + (fp.state_delta_bytes if self.keep_state else 0))

    @property
    def fully_retained(self) -> bool:
        return self.keep_operations and self.keep_state


@dataclass
class NodeStore:
    mode: RetentionMode
    checkpoint_headers: list[BlockHeader] = field(default_factory=list)
    provenance_verified: bool = True
    _segments: dict[int, list[StoredBlock]] = field(default_factory=dict, repr=False)
    _bytes: int = field(default=0, repr=False)
    head_hash: bytes | None = None
    head_segment: int = 0
    head_level: int = -1
    height: int = -1  # blocks ingested over the store's lifetime, minus one

    # -- ingest ----------------------------------------------------------

    def ingest_block(self, block: Block) -> NodeStore:
        """Record ``block`` and apply this store's pruning rule."""
        h = block.header
        if block.kind == BlockKind.ACTIVATION:
            if self.head_hash is not None:
                if h.segment_id != self.head_segment + 1 or h.predecessor_hash != self.head_hash:
                    raise OrderingError(f"activation of segment {h.segment_id} does not extend "
                                        f"head ({self.head_segment}, {self.head_level})")
            if self.mode.kind == ModeKind.SEGMENTED_COMPUTE:
                for sid in list(self._segments):
                    self.discard_segment(sid)
        else:
            if (self.head_hash is None or h.segment_id != self.head_segment
                    or h.level != self.head_level + 1 or h.predecessor_hash != self.head_hash):
                raise OrderingError(f"block ({h.segment_id}, {h.level}) does not extend "
                                    f"head ({self.head_segment}, {self.head_level})")
        self.height += 1
        stored = StoredBlock(block, BlockFootprint.of(block), self.height)
        self._segments.setdefault(h.segment_id, []).append(stored)
        self._bytes += stored.retained_bytes
        self.head_hash, self.head_segment, self.head_level = block.digest, h.segment_id, h.level
        if self.mode.uses_checkpoints and self.height > 0 and self.height % self.mode.checkpoint_interval == 0:
            self._reach_checkpoint(stored)
        return self

    def _reach_checkpoint(self, checkpoint: StoredBlock) -> None:
        c = checkpoint.height
        if self.mode.kind == ModeKind.FULL:
            for blocks in self._segments.values():
                for sb in blocks:
                    if sb.height < c and sb.keep_state:
                        sb.keep_state = False
                        self._bytes -= sb.footprint.state_delta_bytes
            return
        # rolling: everything up to and including the checkpoint collapses into its header
        self.checkpoint_headers.append(checkpoint.block.header)
        self._bytes += HEADER_SIZE
        for sid in list(self._segments):
            blocks = self._segments[sid]
            keep = [sb for sb in blocks if sb.height > c]
            for sb in blocks:
                if sb.height <= c:
                    self._bytes -= sb.retained_bytes
            if keep:
                self._segments[sid] = keep
            else:
                del self._segments[sid]

    def discard_segment(self, segment_id: int) -> None:
        for sb in self._segments.pop(segment_id, []):
            self._bytes -= sb.retained_bytes

    # -- queries ---------------------------------------------------------

    def measured_bytes(self) -> int:
        return self._bytes

    def recount_bytes(self) -> int:
        """Recompute ``measured_bytes`` from scratch."""
        total = sum(sb.retained_bytes for blocks in self._segments.values() for sb in blocks)
        return total + HEADER_SIZE * len(self.checkpoint_headers)

    @property
    def segment_ids(self) -> list[int]:
        return sorted(self._segments)

    def stored_blocks(self, segment_id: int) -> list[StoredBlock]:
        return list(self._segments.get(segment_id, []))

    def retained_components(self, segment_id: int, level: int) -> tuple[bool, bool, bool] | None:
        for sb in self._segments.get(segment_id, []):
            if sb.block.level == level:
                return True, sb.keep_operations, sb.keep_state
        return None

    def is_fully_retained(self, segment_id: int) -> bool:
        """Whole blocks of ``segment_id`` from level 0 to the segment's last ingested block."""
        blocks = self._segments.get(segment_id)
        if not blocks or blocks[0].block.level != 0:
            return False
        return all(sb.keep_operations for sb in blocks)

    def segment(self, segment_id: int) -> Segment:
        return Segment(segment_id, [sb.block for sb in self._segments.get(segment_id, [])])

    @property
    def retained_segments(self) -> dict[int, Segment]:
        return {sid: self.segment(sid) for sid in self.segment_ids}

    @property
    def block_count(self) -> int:
        return sum(len(b) for b in self._segments.values())


def ingest_block(store: NodeStore, block: Block) -> NodeStore:
    return store.ingest_block(block)


def measured_bytes(store: NodeStore) -> int:
    return store.measured_bytes()


@dataclass
class StorageLedger:
    samples: list[tuple[int, int]] = field(default_factory=list)

    def record(self, total_blocks: int, nbytes: int) -> StorageLedger:
        if self.samples and total_blocks <= self.samples[-1][0]:
            raise OrderingError(f"sample at {total_blocks} does not follow {self.samples[-1][0]}")
        self.samples.append((total_blocks, nbytes))
        return self

    def bytes_at(self, total_blocks: int) -> int:
        for t, b in self.samples:
            if t == total_blocks:
                return b
        raise KeyError(total_blocks)

    @property
    def max_bytes(self) -> int:
        return max((b for _, b in self.samples), default=0)

    @property
    def last_bytes(self) -> int:
        return self.samples[-1][1] if self.samples else 0


def record_sample(ledger: StorageLedger, store: NodeStore, total_blocks: int) -> StorageLedger:
    return ledger.record(total_blocks, store.measured_bytes())
