"""Time-segmented blockchain: hash-linked segments, retention modes, rollover protocol and a seeded simulator."""

from .chain import (
    Block,
    BlockHeader,
    BlockKind,
    ChainConfig,
    ContractRegistry,
    ContractSnapshot,
    ContractUpdate,
    Segment,
    Transaction,
    canonical_serialize_block,
    deserialize_block,
    genesis_hash,
    hash_block,
    validate_segment,
    verify_full_chain,
    verify_linkage,
)
from .errors import SegchainError
from .harness import ScenarioConfig, fig3_config, fig4_config, run_experiment, run_scenario
from .netsim import NetParams, Network
from .protocol import Node, NodeRole
from .retention import NodeStore, RetentionMode, StorageLedger
from .snapshot import export_snapshot, import_snapshot
from .workload import Workload, WorkloadConfig

__version__ = "0.1.0"
