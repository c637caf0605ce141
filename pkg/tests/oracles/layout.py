"""Hand-assembled block bytes, written field by field from the layout table."""

from .sha256_ref import sha256


def u8(x):
    return x.to_bytes(1, "little")


def u32(x):
    return x.to_bytes(4, "little")


def u64(x):
    return x.to_bytes(8, "little")


def header(chain_id, segment_id, level, timestamp, pred, ops_hash, kind, op_count):
    return chain_id + u64(segment_id) + u64(level) + u64(timestamp) + pred + ops_hash + u8(kind) + u32(op_count)


def transaction(src, dst, value, desc):
    return u8(0) + src + dst + u64(value) + u32(len(desc)) + desc


def contract_update(cid, state):
    return u8(1) + cid + u32(len(state)) + state


def contract_snapshot(entries):
    return u8(2) + u32(len(entries)) + b"".join(cid + u32(len(s)) + s for cid, s in entries)


def block(chain_id, segment_id, level, timestamp, pred, kind, ops_bytes: list[bytes]):
    body = b"".join(ops_bytes)
    return header(chain_id, segment_id, level, timestamp, pred, sha256(body), kind, len(ops_bytes)) + body


def genesis(chain_id):
    return sha256(b"GENESIS" + chain_id)
