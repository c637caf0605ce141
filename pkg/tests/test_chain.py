import random
from dataclasses import replace

import pytest
from hypothesis import given, strategies as st

from conftest import OTHER_CHAIN_ID, TEST_CHAIN_ID, build_chain, make_tx
from oracles import layout
from oracles.contracts import interpret
from oracles.sha256_ref import sha256 as ref_sha256
from segchain.chain import (
    HEADER_SIZE,
    Block,
    BlockHeader,
    BlockKind,
    ChainConfig,
    ContractRegistry,
    ContractSnapshot,
    ContractUpdate,
    Segment,
    Transaction,
    append_payload_block,
    build_activation_block,
    build_reinjection_block,
    canonical_serialize_block,
    deserialize_block,
    genesis_hash,
    hash_block,
    operations_digest,
    replay_contracts,
    start_segment,
    validate_segment,
    verify_full_chain,
    verify_linkage,
)
from segchain.errors import DecodeError, LinkageError, OrderingError, ValidationError

# Frozen from tests/oracles (pure-Python SHA-256 over hand-assembled bytes).
GOLDEN_ACTIVATION_HASH = "dfb81a3e85f73924fca4ebbc56c935ba5a655803e808e1128f1c7312b21adde4"
GOLDEN_GENESIS_HASH = "dc3a5d581e55fd770b26b3676d8b2d965450aacb4c2e94b32bd6224283e2af4a"
EMPTY_OPS_HASH = ref_sha256(b"")


def zero_activation(chain_id=TEST_CHAIN_ID):
    return Block(BlockHeader(chain_id, 1, 0, 0, bytes(32), EMPTY_OPS_HASH, BlockKind.ACTIVATION))


def payload_segment(n=10, ts=0):
    cfg = ChainConfig(TEST_CHAIN_ID, n)
    return cfg, start_segment(cfg, 1, cfg.genesis_hash, ContractRegistry(), ts)


class TestLayout:
    def test_header_size(self):
        assert HEADER_SIZE == 125

    def test_activation_bytes_match_hand_layout(self):
        assert canonical_serialize_block(zero_activation()) == layout.block(TEST_CHAIN_ID, 1, 0, 0, bytes(32), 0, [])

    def test_golden_activation_hash(self):
        assert hash_block(zero_activation()).hex() == GOLDEN_ACTIVATION_HASH

    def test_golden_genesis_hash(self):
        assert genesis_hash(TEST_CHAIN_ID).hex() == GOLDEN_GENESIS_HASH

    def test_payload_with_1000_byte_description(self):
        _, seg = payload_segment()
        tx = Transaction(bytes(8), (1).to_bytes(8, "little"), 1, b"x" * 1000)
        block = append_payload_block(seg, [tx], 1)
        raw = canonical_serialize_block(block)
        assert len(raw) == 125 + 1 + 8 + 4 + 1000 + 16 == 1154
        expected = layout.block(TEST_CHAIN_ID, 1, 2, 1, seg.blocks[1].digest, 2,
                                [layout.transaction(tx.source, tx.destination, 1, tx.description)])
        assert raw == expected

    def test_reinjection_matches_hand_layout(self):
        cfg = ChainConfig(TEST_CHAIN_ID, 4)
        reg = ContractRegistry({b"B" * 8: b"two", b"A" * 8: b"one"})
        seg = start_segment(cfg, 1, cfg.genesis_hash, reg, 3)
        snap = layout.contract_snapshot([(b"A" * 8, b"one"), (b"B" * 8, b"two")])
        assert seg.blocks[1].encoded == layout.block(TEST_CHAIN_ID, 1, 1, 3, seg.blocks[0].digest, 1, [snap])

    def test_contract_update_layout(self):
        op = ContractUpdate(b"K" * 8, b"state")
        assert op.encode() == layout.contract_update(b"K" * 8, b"state")

    def test_hash_is_sha256_of_serialization(self):
        _, segs = build_chain(1)
        for b in segs[0].blocks:
            assert hash_block(b) == ref_sha256(canonical_serialize_block(b))

    def test_timestamp_locality(self):
        a = zero_activation()
        b = Block(replace(a.header, timestamp=0x0102))
        ra, rb = canonical_serialize_block(a), canonical_serialize_block(b)
        diff = [i for i in range(len(ra)) if ra[i] != rb[i]]
        assert diff == [48, 49]  # timestamp starts after chain_id, segment_id, level

    def test_equal_blocks_serialize_equal(self):
        assert canonical_serialize_block(zero_activation()) == canonical_serialize_block(zero_activation())


class TestInvariantErrors:
    def test_kind_must_match_level(self):
        bad = Block(BlockHeader(TEST_CHAIN_ID, 1, 2, 0, bytes(32), EMPTY_OPS_HASH, BlockKind.ACTIVATION))
        with pytest.raises(ValidationError) as ei:
            canonical_serialize_block(bad)
        assert ei.value.field == "kind"

    def test_segment_zero_rejected(self):
        with pytest.raises(ValidationError) as ei:
            canonical_serialize_block(Block(replace(zero_activation().header, segment_id=0)))
        assert ei.value.field == "segment_id"

    def test_short_digest_rejected(self):
        with pytest.raises(ValidationError) as ei:
            canonical_serialize_block(Block(replace(zero_activation().header, predecessor_hash=b"x")))
        assert ei.value.field == "predecessor_hash"

    def test_activation_with_operations_rejected(self):
        a = zero_activation()
        with pytest.raises(ValidationError):
            canonical_serialize_block(Block(a.header, (make_tx(random.Random(1)),)))

    def test_unsorted_snapshot_rejected(self):
        with pytest.raises(ValidationError):
            ContractSnapshot(((b"B" * 8, b""), (b"A" * 8, b""))).encode()

    def test_snapshot_in_payload_rejected(self):
        _, seg = payload_segment()
        with pytest.raises(ValidationError):
            append_payload_block(seg, [ContractSnapshot()], 1)

    def test_n_below_three_rejected(self):
        with pytest.raises(ValidationError):
            ChainConfig(TEST_CHAIN_ID, 2)


class TestConstructors:
    def test_genesis_activation(self):
        cfg = ChainConfig(TEST_CHAIN_ID, 4)
        a = build_activation_block(cfg, 1, cfg.genesis_hash, 0)
        assert a.kind == BlockKind.ACTIVATION and a.operations == ()
        verify_linkage(genesis_hash(TEST_CHAIN_ID), a)

    def test_segment_one_needs_genesis_predecessor(self):
        cfg = ChainConfig(TEST_CHAIN_ID, 4)
        with pytest.raises(LinkageError):
            build_activation_block(cfg, 1, bytes(range(1, 33)), 0)

    def test_distinct_chain_ids_distinct_genesis(self):
        ids = [ref_sha256(bytes([i])) for i in range(50)]
        assert len({genesis_hash(c) for c in ids}) == 50
        for c in ids:
            assert genesis_hash(c) == layout.genesis(c)

    def test_empty_registry_snapshot(self):
        cfg = ChainConfig(TEST_CHAIN_ID, 4)
        a = build_activation_block(cfg, 1, cfg.genesis_hash, 0)
        r = build_reinjection_block(ContractRegistry(), a, 0)
        assert r.operations == (ContractSnapshot(()),)
        assert r.header.predecessor_hash == hash_block(a)

    def test_registry_snapshot_order(self):
        cfg = ChainConfig(TEST_CHAIN_ID, 4)
        a = build_activation_block(cfg, 1, cfg.genesis_hash, 0)
        reg = ContractRegistry({b"c2" + bytes(6): b"s2", b"c1" + bytes(6): b"s1"})
        r = build_reinjection_block(reg, a, 0)
        assert [cid[:2] for cid, _ in r.operations[0].entries] == [b"c1", b"c2"]

    def test_append_levels(self):
        _, seg = payload_segment()
        b = append_payload_block(seg, [], 1)
        assert b.level == 2 and b.header.predecessor_hash == seg.blocks[1].digest
        validate_segment(seg)

    def test_later_segment_links_to_previous_head(self):
        _, segs = build_chain(2)
        verify_linkage(segs[0].head.digest, segs[1].blocks[0], segs[0].segment_id)


class TestValidation:
    def test_honest_chain(self, chain5):
        cfg, segs = chain5
        verify_full_chain(segs, cfg)

    def test_empty_chain(self):
        verify_full_chain([], ChainConfig(TEST_CHAIN_ID))

    def test_description_tamper_fails_at_block(self, chain5):
        cfg, segs = chain5
        seg = segs[2].copy()
        level = next(i for i, b in enumerate(seg.blocks)
                     if any(isinstance(o, Transaction) and o.description for o in b.operations))
        b = seg.blocks[level]
        ops = list(b.operations)
        k = next(i for i, o in enumerate(ops) if isinstance(o, Transaction) and o.description)
        d = ops[k].description
        ops[k] = replace(ops[k], description=bytes([d[0] ^ 1]) + d[1:])
        seg.blocks[level] = Block(b.header, tuple(ops))
        with pytest.raises(ValidationError) as ei:
            validate_segment(seg)
        assert (ei.value.level, ei.value.field) == (level, "operations_hash")

    def test_reordered_blocks_fail(self, chain5):
        _, segs = chain5
        seg = segs[0].copy()
        seg.blocks[2], seg.blocks[3] = seg.blocks[3], seg.blocks[2]
        with pytest.raises(ValidationError):
            validate_segment(seg)

    def test_tampered_previous_head_breaks_linkage(self, chain5):
        _, segs = chain5
        last = segs[1].head
        forged = Block(replace(last.header, timestamp=last.header.timestamp + 1), last.operations)
        with pytest.raises(LinkageError) as ei:
            verify_linkage(hash_block(forged), segs[2].blocks[0])
        assert ei.value.expected == forged.digest

    def test_gap_is_ordering_error(self, chain5):
        cfg, segs = chain5
        with pytest.raises(OrderingError):
            verify_linkage(segs[0].head.digest, segs[2].blocks[0], 1)
        with pytest.raises((OrderingError, LinkageError)):
            verify_full_chain([segs[0], segs[2]], cfg)

    def test_chain_must_start_at_one(self, chain5):
        cfg, segs = chain5
        with pytest.raises(OrderingError):
            verify_full_chain(segs[1:], cfg)

    def test_foreign_genesis(self):
        cfg, segs = build_chain(2, chain_id=OTHER_CHAIN_ID)
        with pytest.raises(ValidationError):
            verify_full_chain(segs, ChainConfig(TEST_CHAIN_ID, cfg.blocks_per_segment))

    def test_trusted_head_covers_head_timestamp(self, chain5):
        cfg, segs = chain5
        segs = [s.copy() for s in segs]
        head = segs[-1].blocks[-1]
        segs[-1].blocks[-1] = Block(replace(head.header, timestamp=head.header.timestamp + 99), head.operations)
        verify_full_chain(segs, cfg)  # nothing inside the chain commits to the head's timestamp
        with pytest.raises(LinkageError):
            verify_full_chain(segs, cfg, trusted_head=head.digest)


class TestDecoding:
    def test_truncated(self):
        raw = canonical_serialize_block(zero_activation())
        with pytest.raises(DecodeError):
            deserialize_block(raw[:-1])

    def test_trailing(self):
        with pytest.raises(DecodeError):
            deserialize_block(canonical_serialize_block(zero_activation()) + b"\0")

    def test_unknown_kind(self):
        raw = bytearray(canonical_serialize_block(zero_activation()))
        raw[120] = 9
        with pytest.raises(DecodeError):
            deserialize_block(bytes(raw))


# -- properties ----------------------------------------------------------------

ids8 = st.binary(min_size=8, max_size=8)
tx_st = st.builds(Transaction, ids8, ids8, st.integers(0, 2**64 - 1), st.binary(max_size=64))
upd_st = st.builds(ContractUpdate, ids8, st.binary(max_size=32))
op_st = st.one_of(tx_st, upd_st)


@given(ops=st.lists(op_st, max_size=6), ts=st.integers(0, 2**64 - 1))
def test_roundtrip_payload(ops, ts):
    cfg = ChainConfig(TEST_CHAIN_ID, 4)
    seg = start_segment(cfg, 1, cfg.genesis_hash, ContractRegistry(), 0)
    b = append_payload_block(seg, ops, ts)
    assert deserialize_block(canonical_serialize_block(b)) == b


@given(entries=st.dictionaries(ids8, st.binary(max_size=16), max_size=5))
def test_roundtrip_reinjection(entries):
    cfg = ChainConfig(TEST_CHAIN_ID, 4)
    seg = start_segment(cfg, 3, bytes(32), ContractRegistry(entries), 7)
    for b in seg.blocks:
        assert deserialize_block(b.encoded) == b


@given(st.data())
def test_single_byte_flip_changes_digest(data):
    _, segs = build_chain(1, seed=data.draw(st.integers(0, 5)))
    block = data.draw(st.sampled_from(segs[0].blocks))
    raw = bytearray(block.encoded)
    pos = data.draw(st.integers(0, len(raw) - 1))
    raw[pos] ^= data.draw(st.integers(1, 255))
    assert ref_sha256(bytes(raw)) != block.digest


@given(n=st.integers(3, 250), total=st.integers(0, 600), seed=st.integers(0, 2**32))
def test_constructed_chains_verify(n, total, seed):
    rng = random.Random(seed)
    cfg = ChainConfig(TEST_CHAIN_ID, n)
    reg = ContractRegistry()
    segs = [start_segment(cfg, 1, cfg.genesis_hash, reg, 0)]
    for t in range(1, total + 1):
        if segs[-1].payload_count == n:
            segs.append(start_segment(cfg, segs[-1].segment_id + 1, segs[-1].head.digest, reg, t))
        block = append_payload_block(segs[-1], [make_tx(rng, 0)] if rng.random() < 0.2 else [], t)
        assert block.header.predecessor_hash == hash_block(segs[-1].blocks[-2])
    verify_full_chain(segs, cfg)


@given(seed=st.integers(0, 2**32))
def test_random_tamper_detected(seed):
    """Any single-byte change to a non-head block breaks verification (or decoding)."""
    rng = random.Random(seed)
    cfg, segs = build_chain(3, seed=seed % 7)
    si = rng.randrange(len(segs))
    candidates = range(len(segs[si].blocks) - (1 if si == len(segs) - 1 else 0))
    li = rng.choice(list(candidates))
    raw = bytearray(segs[si].blocks[li].encoded)
    raw[rng.randrange(len(raw))] ^= rng.randrange(1, 256)
    try:
        forged = deserialize_block(bytes(raw))
    except DecodeError:
        return
    segs = [s.copy() for s in segs]
    segs[si].blocks[li] = forged
    with pytest.raises((ValidationError, OrderingError)):
        verify_full_chain(segs, cfg)


@given(seed=st.integers(0, 2**32), n_blocks=st.integers(1, 8))
def test_replay_matches_interpreter(seed, n_blocks):
    rng = random.Random(seed)
    cfg = ChainConfig(TEST_CHAIN_ID, 10)
    entries = {bytes([65 + i]) * 8: rng.randbytes(3) for i in range(rng.randint(0, 3))}
    seg = start_segment(cfg, 2, bytes(32), ContractRegistry(entries), 0)
    trace = []
    for t in range(n_blocks):
        ops = []
        for _ in range(rng.randint(0, 4)):
            if rng.random() < 0.6:
                op = ContractUpdate(bytes([65 + rng.randrange(5)]) * 8, rng.randbytes(rng.randint(0, 5)))
                trace.append(("update", op.contract_id, op.new_state))
            else:
                op = make_tx(rng)
                trace.append(("tx", b"", b""))
            ops.append(op)
        append_payload_block(seg, ops, t)
    expected = interpret(sorted(entries.items()), trace)
    assert sorted(replay_contracts(seg).entries.items()) == expected
    # pure function of the bytes
    decoded = Segment(seg.segment_id, [deserialize_block(b.encoded) for b in seg.blocks])
    assert replay_contracts(decoded) == replay_contracts(seg)


def test_replay_without_updates_equals_snapshot():
    cfg = ChainConfig(TEST_CHAIN_ID, 4)
    reg = ContractRegistry({b"A" * 8: b"1"})
    seg = start_segment(cfg, 2, bytes(32), reg, 0)
    append_payload_block(seg, [make_tx(random.Random(0))], 1)
    assert replay_contracts(seg) == reg


def test_replay_last_writer_wins():
    cfg = ChainConfig(TEST_CHAIN_ID, 4)
    seg = start_segment(cfg, 1, cfg.genesis_hash, ContractRegistry(), 0)
    append_payload_block(seg, [ContractUpdate(b"A" * 8, b"1"), ContractUpdate(b"A" * 8, b"2")], 1)
    append_payload_block(seg, [ContractUpdate(b"A" * 8, b"3")], 2)
    assert replay_contracts(seg).entries == {b"A" * 8: b"3"}


def test_reinjection_decodes_to_previous_registry():
    cfg, segs = build_chain(4, seed=11)
    for prev, nxt in zip(segs, segs[1:]):
        carried = ContractRegistry.from_snapshot(nxt.blocks[1].operations[0])
        assert carried == replay_contracts(prev)


def test_operations_digest_flat():
    ops = [make_tx(random.Random(i)) for i in range(3)]
    assert operations_digest(ops) == ref_sha256(b"".join(o.encode() for o in ops))
