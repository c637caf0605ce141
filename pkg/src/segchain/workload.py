"""Seeded transaction load: up to 32 clients, value-1 transfers with long random descriptions."""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass

from .chain import TX_OVERHEAD, UPDATE_OVERHEAD, ContractUpdate, Operation, Transaction
from .errors import ConfigError
from .protocol import TxSubmit

MAX_CLIENTS = 32


@dataclass(frozen=True)
class WorkloadConfig:
    num_clients: int = 32
    num_accounts: int = 64
    description_min_len: int = 1000
    description_max_len: int = 1100
    value: int = 1
    seed: int = 0
    # Fraction of client submissions that are contract updates instead of transfers.
    contract_update_prob: float = 0.0
    num_contracts: int = 4
    contract_state_max_len: int = 64

    def __post_init__(self):
        if not 0 <= self.num_clients <= MAX_CLIENTS:
            raise ConfigError(f"num_clients must be in [0, {MAX_CLIENTS}]")
        if self.num_accounts < 2:
            raise ConfigError("num_accounts must be >= 2")
        if self.value != 1:
            raise ConfigError("transaction value is fixed at 1")
        if not 0 <= self.description_min_len <= self.description_max_len:
            raise ConfigError("description length bounds are inverted")
        if not 0.0 <= self.contract_update_prob <= 1.0:
            raise ConfigError("contract_update_prob must be a probability")
        if self.num_contracts < 1:
            raise ConfigError("num_contracts must be >= 1")

    @property
    def max_op_bytes(self) -> int:
        return max(TX_OVERHEAD + self.description_max_len, UPDATE_OVERHEAD + self.contract_state_max_len)


def account_id(index: int) -> bytes:
    return struct.pack("<Q", index)


def contract_id(index: int) -> bytes:
    return b"C" + struct.pack("<Q", index)[:7]


def gen_transaction(rng: random.Random, config: WorkloadConfig) -> Transaction:
    if config.num_accounts < 2:
        raise ConfigError("num_accounts must be >= 2")
    src = rng.randrange(config.num_accounts)
    dst = rng.randrange(config.num_accounts)
    while dst == src:
        dst = rng.randrange(config.num_accounts)
    n = rng.randint(config.description_min_len, config.description_max_len)
    return Transaction(account_id(src), account_id(dst), config.value, rng.randbytes(n))


def gen_contract_update(rng: random.Random, config: WorkloadConfig) -> ContractUpdate:
    cid = contract_id(rng.randrange(config.num_contracts))
    return ContractUpdate(cid, rng.randbytes(rng.randint(1, config.contract_state_max_len)))


class Workload:
    """Stateful generator; one instance per simulated run."""

    def __init__(self, config: WorkloadConfig):
        self.config = config
        self.rng = random.Random(config.seed)

    def next_operation(self) -> Operation:
        cfg = self.config
        if cfg.contract_update_prob and self.rng.random() < cfg.contract_update_prob:
            return gen_contract_update(self.rng, cfg)
        return gen_transaction(self.rng, cfg)

    def round(self) -> list[Operation]:
        """One submission from every client, in client order."""
        return [self.next_operation() for _ in range(self.config.num_clients)]


def client_ids(config: WorkloadConfig) -> list[str]:
    return [f"client-{i:02d}" for i in range(config.num_clients)]


def register_clients(net, config: WorkloadConfig) -> list[str]:
    ids = client_ids(config)
    for cid in ids:
        if cid not in net:
            net.register(cid, lambda env: None)
    return ids


def run_clients(workload: Workload, net, genesis_peer: str, rounds: int = 1) -> int:
    """Each round every client sends one TxSubmit to the genesis node. Returns messages sent."""
    ids = register_clients(net, workload.config)
    sent = 0
    for _ in range(rounds):
        for cid, op in zip(ids, workload.round()):
            net.send(cid, genesis_peer, TxSubmit(op))
            sent += 1
    return sent
