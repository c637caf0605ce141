import hashlib
import random
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from segchain.chain import ChainConfig, ContractRegistry, ContractUpdate, Transaction, append_payload_block, start_segment

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

TEST_CHAIN_ID = bytes(range(32))
OTHER_CHAIN_ID = hashlib.sha256(b"other").digest()


def make_tx(rng: random.Random, desc_len: int | None = None) -> Transaction:
    src = rng.randrange(16)
    dst = (src + 1 + rng.randrange(15)) % 16
    n = rng.randint(0, 40) if desc_len is None else desc_len
    return Transaction(src.to_bytes(8, "little"), dst.to_bytes(8, "little"), 1, rng.randbytes(n))


def make_update(rng: random.Random) -> ContractUpdate:
    return ContractUpdate(b"C" + bytes([rng.randrange(4)]) + bytes(6), rng.randbytes(rng.randint(0, 16)))


def build_chain(num_segments: int, n: int = 4, seed: int = 0, chain_id: bytes = TEST_CHAIN_ID,
                with_updates: bool = True, ops_per_block: int = 3):
    """Closed segments 1..num_segments built only through the public constructors."""
    rng = random.Random(seed)
    config = ChainConfig(chain_id, n)
    registry = ContractRegistry()
    segments = []
    pred = config.genesis_hash
    t = 0
    for sid in range(1, num_segments + 1):
        seg = start_segment(config, sid, pred, registry, t)
        for _ in range(n):
            t += 1
            ops = [make_update(rng) if with_updates and rng.random() < 0.3 else make_tx(rng)
                   for _ in range(rng.randint(0, ops_per_block))]
            append_payload_block(seg, ops, t)
            for op in ops:
                registry.apply(op)
        segments.append(seg)
        pred = seg.head.digest
    return config, segments


@pytest.fixture
def chain5():
    return build_chain(5)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for line in results:
        terminalreporter.write_line(line)
