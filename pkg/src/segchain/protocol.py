"""Per-node protocol: block production, segment rollover and bootstrap.

A :class:`Node` is an event handler attached to a :class:`~segchain.netsim.Network`.
The genesis node is the only producer. When its current segment holds
``N`` payload blocks it closes the segment, signs an activation block for
the next one (segment id plus the digest of the closing segment's last
block) and broadcasts it together with a reboot signal. Other nodes roll
over when the activation arrives; compute and query nodes drop the closed
segment, cold-storage nodes keep it. The peer table is never touched.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey

from .chain import (
    DIGEST_SIZE,
    Block,
    BlockKind,
    ChainConfig,
    ContractRegistry,
    Operation,
    Segment,
    Transaction,
    append_payload_block,
    build_activation_block,
    build_reinjection_block,
    check_block,
    replay_contracts,
    sha256,
    validate_segment,
    verify_linkage,
)
from .errors import (
    AuthenticationError,
    BootstrapError,
    DecodeError,
    MissingSegmentError,
    OrderingError,
    RoleError,
    SegchainError,
    ValidationError,
)
from .retention import ModeKind, NodeStore, RetentionMode

log = logging.getLogger(__name__)

MAX_OPS_PER_BLOCK = 32
_NO_HASH = bytes(DIGEST_SIZE)


class NodeRole(enum.Enum):
    GENESIS = "genesis"
    COLD_STORAGE = "cold"
    COMPUTE = "compute"
    QUERY = "query"

    @property
    def retention(self) -> RetentionMode:
        if self in (NodeRole.GENESIS, NodeRole.COLD_STORAGE):
            return RetentionMode.segmented_cold()
        return RetentionMode.segmented_compute()


# -- phases -------------------------------------------------------------------


@dataclass(frozen=True)
class Bootstrapping:
    target_segment: int = 0  # 0 until a head response names one


@dataclass(frozen=True)
class Running:
    pass


@dataclass(frozen=True)
class RollingOver:
    next_segment: int


NodePhase = Bootstrapping | Running | RollingOver


# -- messages -----------------------------------------------------------------


@dataclass(frozen=True)
class TxSubmit:
    op: Operation


@dataclass(frozen=True)
class BlockGossip:
    block: Block


@dataclass(frozen=True)
class ActivationAnnounce:
    block: Block
    signature: bytes


@dataclass(frozen=True)
class RebootSignal:
    new_segment_id: int


@dataclass(frozen=True)
class HeadRequest:
    pass


@dataclass(frozen=True)
class HeadResponse:
    segment_id: int  # 0 means the responder has no usable head
    level: int
    head_hash: bytes


@dataclass(frozen=True)
class SegmentRequest:
    segment_id: int


@dataclass(frozen=True)
class SegmentResponse:
    segment_id: int
    segment: Segment | None
    activation_signature: bytes = b""

    @property
    def payload_bytes(self) -> int:
        return self.segment.serialized_size if self.segment is not None else 0


# -- activation signatures ----------------------------------------------------


def derive_signing_key(seed_material: bytes) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(sha256(b"segchain-genesis-key" + seed_material))


def public_key_bytes(key: Ed25519PrivateKey) -> bytes:
    return key.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)


def sign_activation(key: Ed25519PrivateKey, activation: Block) -> bytes:
    return key.sign(activation.digest)


def verify_activation(public_key: bytes | None, activation: Block, signature: bytes) -> None:
    if public_key is None:
        raise AuthenticationError("no genesis public key configured")
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, activation.digest)
    except (InvalidSignature, ValueError):
        raise AuthenticationError(f"bad activation signature for segment {activation.segment_id}") from None


# -- node ---------------------------------------------------------------------


@dataclass
class _Sync:
    """Partial bootstrap state, thrown away on a reboot signal (compute) or kept (cold)."""
    candidates: list[str]
    head_index: int = 0
    seg_candidates: list[str] = field(default_factory=list)
    seg_index: int = 0
    awaiting: int | None = None
    retries: int = 0
    buffer: list[Block] = field(default_factory=list)
    history: list[Segment] = field(default_factory=list)
    head_pending: bool = True
    stalled: bool = False


class Node:
    def __init__(self, peer_id: str, role: NodeRole, config: ChainConfig, *,
                 signing_key: Ed25519PrivateKey | None = None,
                 max_ops_per_block: int = MAX_OPS_PER_BLOCK):
        if role == NodeRole.GENESIS and signing_key is None:
            raise RoleError("the genesis node needs a signing key")
        self.id = peer_id
        self.role = role
        self.config = config
        self.current_segment = 0
        self.phase: NodePhase = Bootstrapping()
        self.store = NodeStore(role.retention)
        self.segment: Segment | None = None
        self.registry = ContractRegistry()
        self.mempool: list[Operation] = []
        self.peer_table: set[str] = set()
        self.activation_signatures: dict[int, bytes] = {}
        self.max_ops_per_block = max_ops_per_block
        self.alarms: list[SegchainError] = []
        self.bytes_downloaded = 0
        self.rollovers = 0
        self.reboots = 0
        # fault injection hooks for tests
        self.withhold: set[int] = set()
        self.corrupt_responses = False

        self._key = signing_key
        self._recorded_hash: bytes | None = None
        self._sync: _Sync | None = None
        self.net = None

    def __repr__(self) -> str:
        return f"Node({self.id!r}, {self.role.value}, {self.phase}, head={self.head})"

    # -- wiring ------------------------------------------------------------

    def attach(self, net) -> Node:
        self.net = net
        net.register(self.id, self.handle)
        return self

    def send(self, to: str, message) -> None:
        self.net.send(self.id, to, message)

    def broadcast(self, message) -> None:
        for peer in sorted(self.peer_table):
            self.send(peer, message)

    def alarm(self, err: SegchainError) -> None:
        log.warning("%s: %s", self.id, err)
        self.alarms.append(err)

    # -- views ---------------------------------------------------------------

    @property
    def head(self) -> tuple[int, int, bytes] | None:
        if self.segment is None or not self.segment.blocks:
            return None
        b = self.segment.head
        return (b.segment_id, b.level, b.digest)

    @property
    def is_running(self) -> bool:
        return isinstance(self.phase, Running)

    def rollover_due(self) -> bool:
        return self.segment is not None and self.segment.payload_count >= self.config.blocks_per_segment

    # -- genesis duties ------------------------------------------------------

    def start_chain(self, now: int) -> Block:
        """Open segment 1, linked to the genesis hash."""
        self._require_role(NodeRole.GENESIS)
        self._recorded_hash = self.config.genesis_hash
        self.current_segment = 1
        self.phase = RollingOver(1)
        return self._announce_activation(now)

    def await_genesis(self) -> None:
        """Founding members wait for the activation of segment 1."""
        self._recorded_hash = self.config.genesis_hash
        self.phase = RollingOver(1)

    def produce_block(self, now: int) -> Block:
        self._require_role(NodeRole.GENESIS)
        if not self.is_running:
            raise OrderingError(f"cannot produce while {self.phase}")
        ops = self.mempool[:self.max_ops_per_block]
        del self.mempool[:self.max_ops_per_block]
        block = append_payload_block(self.segment, ops, now)
        self._record(block)
        self.broadcast(BlockGossip(block))
        return block

    def _announce_activation(self, now: int) -> Block:
        sid = self.current_segment
        activation = build_activation_block(self.config, sid, self._recorded_hash, now)
        signature = sign_activation(self._key, activation)
        self.broadcast(ActivationAnnounce(activation, signature))
        if sid > 1:
            self.broadcast(RebootSignal(sid))
        self._accept_activation(activation, signature)
        return activation

    # -- rollover ------------------------------------------------------------

    def execute_rollover(self, now: int, activation: Block | None = None,
                         signature: bytes | None = None) -> Node:
        """Close the current segment and open the next one.

        The genesis node calls this without an activation and produces one;
        every other node passes the announced activation and its signature.
        """
        if not self.is_running:
            raise OrderingError(f"{self.id} cannot roll over while {self.phase}")
        if activation is None:
            self._require_role(NodeRole.GENESIS)
        if not self.rollover_due():
            raise OrderingError(f"{self.id}: segment {self.current_segment} holds "
                                f"{self.segment.payload_count} of {self.config.blocks_per_segment} payload blocks")
        closing = self.current_segment
        self._recorded_hash = self.segment.head.digest
        self.current_segment += 1
        self.phase = RollingOver(self.current_segment)
        if self.store.mode.kind == ModeKind.SEGMENTED_COMPUTE:
            self.store.discard_segment(closing)
        if activation is None:
            self._announce_activation(now)
        else:
            self._accept_activation(activation, signature)
        return self

    def _accept_activation(self, activation: Block, signature: bytes) -> bool:
        expected = self.phase.next_segment
        try:
            verify_activation(self.config.genesis_public_key, activation, signature)
            check_block(activation)
            if activation.segment_id != expected:
                raise OrderingError(f"activation for segment {activation.segment_id}, expected {expected}")
            verify_linkage(self._recorded_hash, activation)
        except SegchainError as err:
            self.alarm(err)  # stays RollingOver
            return False
        reinjection = build_reinjection_block(self.registry, activation, activation.header.timestamp)
        self.store.ingest_block(activation)
        self.store.ingest_block(reinjection)
        self.segment = Segment(activation.segment_id, [activation, reinjection])
        self.current_segment = activation.segment_id
        self.activation_signatures[activation.segment_id] = signature
        self._recorded_hash = None
        self.phase = Running()
        self.rollovers += 1
        return True

    # -- block intake ----------------------------------------------------------

    def _record(self, block: Block) -> None:
        self.store.ingest_block(block)
        for op in block.operations:
            self.registry.apply(op)

    def _apply_block(self, block: Block) -> bool:
        seg = self.segment
        if block.segment_id == seg.segment_id and block.level < len(seg.blocks):
            if seg.blocks[block.level].digest != block.digest:
                self.alarm(ValidationError("conflicting block", segment_id=block.segment_id, level=block.level))
            return False
        if (block.segment_id != seg.segment_id or block.level != len(seg.blocks)
                or block.header.predecessor_hash != seg.head.digest):
            self.alarm(OrderingError(f"block ({block.segment_id}, {block.level}) does not extend {self.head[:2]}"))
            return False
        try:
            check_block(block)
            if block.kind != BlockKind.PAYLOAD:
                raise ValidationError("gossiped block is not a payload block",
                                      segment_id=block.segment_id, level=block.level)
        except ValidationError as err:
            self.alarm(err)
            return False
        seg.blocks.append(block)
        self._record(block)
        return True

    # -- message dispatch ------------------------------------------------------

    def handle(self, env) -> None:
        msg = env.message
        if isinstance(msg, TxSubmit):
            if self.role == NodeRole.GENESIS:
                self.mempool.append(msg.op)
        elif isinstance(msg, BlockGossip):
            self._on_block(msg.block)
        elif isinstance(msg, ActivationAnnounce):
            self._on_activation(msg, env.deliver_at)
        elif isinstance(msg, RebootSignal):
            self.handle_reboot_signal(msg)
        elif isinstance(msg, HeadRequest):
            self._on_head_request(env.sender)
        elif isinstance(msg, HeadResponse):
            self._on_head_response(msg, env.sender)
        elif isinstance(msg, SegmentRequest):
            self._on_segment_request(msg, env.sender)
        elif isinstance(msg, SegmentResponse):
            self._on_segment_response(msg, env.sender)

    def _on_block(self, block: Block) -> None:
        if isinstance(self.phase, Bootstrapping):
            self._sync.buffer.append(block)
        elif self.is_running:
            self._apply_block(block)

    def _on_activation(self, msg: ActivationAnnounce, now: int) -> None:
        try:
            verify_activation(self.config.genesis_public_key, msg.block, msg.signature)
        except AuthenticationError as err:
            self.alarm(err)
            return
        sid = msg.block.segment_id
        if isinstance(self.phase, RollingOver):
            if sid == self.phase.next_segment:
                self._accept_activation(msg.block, msg.signature)
        elif self.is_running and sid == self.current_segment + 1:
            try:
                self.execute_rollover(now, msg.block, msg.signature)
            except OrderingError as err:
                self.alarm(err)
        # bootstrapping nodes wait for the reboot signal instead

    # -- serving ---------------------------------------------------------------

    def _on_head_request(self, sender: str) -> None:
        if self.is_running:
            sid, level, digest = self.head
            self.send(sender, HeadResponse(sid, level, digest))
        else:
            self.send(sender, HeadResponse(0, 0, _NO_HASH))

    def _on_segment_request(self, msg: SegmentRequest, sender: str) -> None:
        sid = msg.segment_id
        if sid in self.withhold or not self.store.is_fully_retained(sid):
            self.send(sender, SegmentResponse(sid, None))
            return
        if self.segment is not None and sid == self.segment.segment_id:
            seg = self.segment.copy()
        else:
            seg = self.store.segment(sid)
        if self.corrupt_responses:
            seg = _corrupt(seg)
        self.send(sender, SegmentResponse(sid, seg, self.activation_signatures.get(sid, b"")))

    # -- bootstrap -------------------------------------------------------------

    def bootstrap_compute(self) -> Node:
        if self.role not in (NodeRole.COMPUTE, NodeRole.QUERY):
            raise RoleError(f"{self.role.value} nodes do not use the compute bootstrap")
        return self._start_bootstrap()

    def bootstrap_cold(self) -> Node:
        self._require_role(NodeRole.COLD_STORAGE)
        return self._start_bootstrap()

    def bootstrap(self) -> Node:
        if self.role == NodeRole.COLD_STORAGE:
            return self.bootstrap_cold()
        return self.bootstrap_compute()

    def _start_bootstrap(self, target: int = 0) -> Node:
        if not self.peer_table:
            raise BootstrapError(f"{self.id} has no peers to bootstrap from")
        keep_history = self._sync.history if (self._sync and self.role == NodeRole.COLD_STORAGE) else []
        self.phase = Bootstrapping(target)
        self._sync = _Sync(sorted(self.peer_table), history=keep_history)
        self.send(self._sync.candidates[0], HeadRequest())
        return self

    def handle_reboot_signal(self, msg: RebootSignal) -> Node:
        if not isinstance(self.phase, Bootstrapping) or msg.new_segment_id <= self.phase.target_segment:
            return self
        self.reboots += 1
        sync = self._sync
        if self.role == NodeRole.COLD_STORAGE and not sync.head_pending:
            # verified history survives; the in-flight request finishes against the new target
            self.phase = Bootstrapping(msg.new_segment_id)
            sync.buffer = [b for b in sync.buffer if b.segment_id >= msg.new_segment_id]
            if sync.stalled:
                sync.stalled = False
                self._request_segment(self._next_history_segment())
            return self
        return self._start_bootstrap(msg.new_segment_id)

    def _on_head_response(self, msg: HeadResponse, sender: str) -> None:
        sync = self._sync
        if not isinstance(self.phase, Bootstrapping) or not sync.head_pending:
            return
        if sender != sync.candidates[sync.head_index]:
            return
        if msg.segment_id == 0:
            sync.head_index += 1
            if sync.head_index >= len(sync.candidates):
                self.alarm(BootstrapError(f"{self.id}: no running peer answered the head request"))
                sync.stalled = True
            else:
                self.send(sync.candidates[sync.head_index], HeadRequest())
            return
        if msg.segment_id < self.phase.target_segment:
            return  # sent before the rollover that rebooted us
        self.phase = Bootstrapping(msg.segment_id)
        sync.head_pending = False
        sync.seg_candidates = [sender] + [p for p in sync.candidates if p != sender]
        if self.role == NodeRole.COLD_STORAGE:
            self._request_segment(self._next_history_segment())
        else:
            self._request_segment(msg.segment_id)

    def _next_history_segment(self) -> int:
        history = self._sync.history
        return history[-1].segment_id + 1 if history else 1

    def _request_segment(self, sid: int, reset_peer: bool = True) -> None:
        sync = self._sync
        if reset_peer:
            sync.seg_index = 0
            sync.retries = 0
        sync.awaiting = sid
        self.send(sync.seg_candidates[sync.seg_index], SegmentRequest(sid))

    def _try_next_peer(self, err: SegchainError) -> None:
        sync = self._sync
        sync.seg_index += 1
        if sync.seg_index >= len(sync.seg_candidates):
            self.alarm(err)
            sync.stalled = True
            return
        self._request_segment(sync.awaiting, reset_peer=False)

    def _on_segment_response(self, msg: SegmentResponse, sender: str) -> None:
        sync = self._sync
        if (not isinstance(self.phase, Bootstrapping) or sync.stalled or msg.segment_id != sync.awaiting
                or sender != sync.seg_candidates[sync.seg_index]):
            return
        sid = msg.segment_id
        if msg.segment is None:
            err = MissingSegmentError(sid) if self.role == NodeRole.COLD_STORAGE else \
                BootstrapError(f"{self.id}: no peer served segment {sid}")
            self._try_next_peer(err)
            return
        self.bytes_downloaded += msg.payload_bytes
        seg = msg.segment
        try:
            validate_segment(seg)
            if seg.segment_id != sid or seg.blocks[0].header.chain_id != self.config.chain_id:
                raise ValidationError("segment does not match the request", segment_id=sid)
            if self.role != NodeRole.COLD_STORAGE:
                verify_activation(self.config.genesis_public_key, seg.blocks[0], msg.activation_signature)
        except SegchainError as err:
            self.alarm(err)
            self._try_next_peer(BootstrapError(f"{self.id}: every peer served an invalid segment {sid}"))
            return
        if self.role == NodeRole.COLD_STORAGE:
            self._accept_history_segment(seg, msg.activation_signature)
        else:
            self.store = NodeStore(self.role.retention)
            self._install(seg, msg.activation_signature)

    def _accept_history_segment(self, seg: Segment, signature: bytes) -> None:
        sync = self._sync
        target = self.phase.target_segment
        if seg.segment_id < target and len(seg.blocks) != self.config.blocks_per_full_segment:
            # served while still open; by now the peer has closed it
            sync.retries += 1
            if sync.retries > 3:
                self._try_next_peer(MissingSegmentError(seg.segment_id))
            else:
                self._request_segment(seg.segment_id, reset_peer=False)
            return
        try:
            if sync.history:
                verify_linkage(sync.history[-1].head.digest, seg.blocks[0], sync.history[-1].segment_id)
            else:
                if seg.segment_id != 1:
                    raise OrderingError(f"history must start at segment 1, got {seg.segment_id}")
                verify_linkage(self.config.genesis_hash, seg.blocks[0])
        except SegchainError as err:
            self.alarm(err)
            sync.stalled = True  # abort; a linkage break is not a peer problem
            return
        for block in seg.blocks:
            self.store.ingest_block(block)
        if signature:
            self.activation_signatures[seg.segment_id] = signature
        sync.history.append(seg)
        if seg.segment_id >= target:
            self._install(seg, signature, already_stored=True)
        else:
            self._request_segment(seg.segment_id + 1)

    def _install(self, seg: Segment, signature: bytes, already_stored: bool = False) -> None:
        if not already_stored:
            for block in seg.blocks:
                self.store.ingest_block(block)
        try:
            self.registry = replay_contracts(seg)
        except DecodeError as err:
            self.alarm(err)
            self._sync.stalled = True
            return
        self.segment = seg
        self.current_segment = seg.segment_id
        if signature:
            self.activation_signatures[seg.segment_id] = signature
        buffered = sorted(self._sync.buffer, key=lambda b: (b.segment_id, b.level))
        self._sync = None
        self.phase = Running()
        for block in buffered:
            if block.segment_id == seg.segment_id and block.level == len(seg.blocks):
                self._apply_block(block)

    def _require_role(self, role: NodeRole) -> None:
        if self.role != role:
            raise RoleError(f"{self.id} is a {self.role.value} node, expected {role.value}")


def rollover_due(node: Node) -> bool:
    return node.rollover_due()


def produce_block(genesis: Node, now: int) -> Block:
    return genesis.produce_block(now)


def execute_rollover(node: Node, now: int, activation: Block | None = None,
                     signature: bytes | None = None) -> Node:
    return node.execute_rollover(now, activation, signature)


def bootstrap_compute(node: Node) -> Node:
    return node.bootstrap_compute()


def bootstrap_cold(node: Node) -> Node:
    return node.bootstrap_cold()


def handle_reboot_signal(node: Node, msg: RebootSignal) -> Node:
    return node.handle_reboot_signal(msg)


def _corrupt(seg: Segment) -> Segment:
    """Flip one description byte in the last payload block, keeping its header."""
    blocks = list(seg.blocks)
    for i in range(len(blocks) - 1, 1, -1):
        ops = list(blocks[i].operations)
        for j, op in enumerate(ops):
            if isinstance(op, Transaction) and op.description:
                desc = bytes([op.description[0] ^ 0xFF]) + op.description[1:]
                ops[j] = Transaction(op.source, op.destination, op.value, desc)
                blocks[i] = Block(blocks[i].header, tuple(ops))
                return Segment(seg.segment_id, blocks)
    # nothing to corrupt in the payload; break the reinjection link instead
    h = blocks[-1].header
    blocks[-1] = Block(replace(h, predecessor_hash=bytes(DIGEST_SIZE)), blocks[-1].operations)
    return Segment(seg.segment_id, blocks)
