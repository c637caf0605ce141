"""Experiment runner: scenarios, seeded simulations, storage ledgers and reports.

Segmented runs drive a full simulated network round by round. Each round
the genesis node first rolls over if its segment is full, then every
client submits one transaction and the genesis node seals them into a
payload block. A round ends once every running node has the genesis
head. Nodes still bootstrapping are not waited for, so a join can race a
rollover.

Unsegmented comparison runs (archive / full / rolling) replay the same
seeded operation stream into a single never-closing segment.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable

from .chain import ChainConfig, ContractRegistry, append_payload_block, start_segment
from .errors import ConfigError, SegchainError, SimTimeout
from .netsim import NetParams, Network
from .protocol import MAX_OPS_PER_BLOCK, Bootstrapping, Node, NodeRole, derive_signing_key, public_key_bytes
from .retention import NodeStore, RetentionMode, StorageLedger
from .snapshot import persist_segment
from .workload import Workload, WorkloadConfig, run_clients

log = logging.getLogger(__name__)

DEFAULT_CHAIN_ID = hashlib.sha256(b"segchain-default-chain").digest()
REPORT_HEADER = ("mode", "node_role", "total_blocks", "bytes")
UNSEGMENTED_MODES = ("archive", "full", "rolling")


@dataclass(frozen=True)
class Topology:
    num_compute: int = 1
    num_cold: int = 1
    num_query: int = 0


@dataclass(frozen=True)
class JoinEvent:
    """A node that joins after ``after_blocks`` payload blocks have been produced."""
    after_blocks: int
    role: NodeRole
    wait: bool = True  # hold block production until the node is running


@dataclass
class ScenarioConfig:
    topology: Topology = field(default_factory=Topology)
    chain: ChainConfig = field(default_factory=lambda: ChainConfig(DEFAULT_CHAIN_ID, 10))
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    retention_compare: tuple[str, ...] = ("archive", "full", "rolling", "segmented")
    checkpoint_interval: int = 10
    total_payload_blocks: int = 1000
    sample_every: int = 1
    join_events: tuple[JoinEvent, ...] = ()
    output_dir: Path | None = None
    sweep_blocks_per_segment: tuple[int, ...] = ()
    latency_ticks: int = 1
    ticks_per_block: int = 50
    join_tick_budget: int = 20_000
    record_trace: bool = False

    def __post_init__(self):
        for n in self.segment_sizes:
            if self.total_payload_blocks < n:
                raise ConfigError(f"total_payload_blocks ({self.total_payload_blocks}) < blocks_per_segment ({n})")
        if self.sample_every < 1:
            raise ConfigError("sample_every must be >= 1")
        for mode in self.retention_compare:
            if mode not in UNSEGMENTED_MODES + ("segmented",):
                raise ConfigError(f"unknown retention mode {mode!r}")
        for ev in self.join_events:
            if ev.role == NodeRole.GENESIS:
                raise ConfigError("the genesis node cannot join mid-run")

    @property
    def segment_sizes(self) -> tuple[int, ...]:
        return self.sweep_blocks_per_segment or (self.chain.blocks_per_segment,)

    @property
    def seed(self) -> int:
        return self.workload.seed

    def with_seed(self, seed: int) -> ScenarioConfig:
        return replace(self, workload=replace(self.workload, seed=seed))


@dataclass(frozen=True)
class ReportRow:
    mode: str
    node_role: str
    total_blocks: int
    bytes: int


def segmented_label(n: int) -> str:
    return f"segmented-n{n}"


def genesis_key_for(chain_id: bytes, seed: int):
    return derive_signing_key(chain_id + seed.to_bytes(8, "little", signed=False))


# -- segmented simulation ------------------------------------------------------


class SegmentedSimulation:
    """One seeded network running the segmentation protocol."""

    def __init__(self, cfg: ScenarioConfig, blocks_per_segment: int | None = None,
                 observer: Callable[[SegmentedSimulation, str], None] | None = None):
        self.cfg = cfg
        n = blocks_per_segment or cfg.chain.blocks_per_segment
        key = genesis_key_for(cfg.chain.chain_id, cfg.seed)
        self.chain = ChainConfig(cfg.chain.chain_id, n, public_key_bytes(key))
        self.label = segmented_label(n)
        self.net = Network(NetParams(cfg.latency_ticks, cfg.seed), record_trace=cfg.record_trace)
        self.workload = Workload(cfg.workload)
        self.observer = observer
        self.nodes: dict[str, Node] = {}
        self.ledgers: dict[str, StorageLedger] = {}
        self.join_log: list[tuple[int, str]] = []
        self.payload_blocks = 0
        self._counts: dict[NodeRole, int] = {}
        self.genesis = self._add(Node("genesis", NodeRole.GENESIS, self.chain, signing_key=key))
        topo = cfg.topology
        for role, count in ((NodeRole.COLD_STORAGE, topo.num_cold), (NodeRole.COMPUTE, topo.num_compute),
                            (NodeRole.QUERY, topo.num_query)):
            for _ in range(count):
                self.add_node(role).await_genesis()

    # -- membership ---------------------------------------------------------

    def _add(self, node: Node) -> Node:
        node.attach(self.net)
        node.peer_table = set(self.nodes)
        for other in self.nodes.values():
            other.peer_table.add(node.id)
        self.nodes[node.id] = node
        return node

    def add_node(self, role: NodeRole) -> Node:
        idx = self._counts.get(role, 0)
        self._counts[role] = idx + 1
        return self._add(Node(f"{role.value}-{idx:02d}", role, self.chain))

    def join(self, role: NodeRole, wait: bool = True) -> Node:
        node = self.add_node(role)
        self.join_log.append((self.payload_blocks, node.id))
        node.bootstrap()
        if wait:
            self.net.run_until(lambda: node.is_running and self.converged(), self.cfg.join_tick_budget,
                               self.diagnostics)
        return node

    # -- conditions ------------------------------------------------------------

    def active_nodes(self) -> list[Node]:
        return [n for n in self.nodes.values() if not isinstance(n.phase, Bootstrapping)]

    def converged(self) -> bool:
        head = self.genesis.head
        return all(n.is_running and n.head == head for n in self.active_nodes())

    def all_running(self) -> bool:
        return all(n.is_running for n in self.nodes.values()) and self.converged()

    def diagnostics(self) -> dict[str, object]:
        return {nid: (type(n.phase).__name__, n.head[:2] if n.head else None) for nid, n in self.nodes.items()}

    def _settle(self, condition: Callable[[], bool] | None = None) -> None:
        self.net.run_until(condition or self.converged, self.cfg.ticks_per_block, self.diagnostics)

    # -- driving -----------------------------------------------------------

    def start(self) -> None:
        self.genesis.start_chain(self.net.now)
        self._settle()
        self._sample()

    def step_round(self) -> None:
        g = self.genesis
        if g.rollover_due():
            self._notify("pre-rollover")
            g.execute_rollover(self.net.now)
            self._settle()
            self._notify("rollover")
        expected = len(g.mempool) + run_clients(self.workload, self.net, g.id, rounds=1)
        self._settle(lambda: len(g.mempool) >= expected)
        g.produce_block(self.net.now)
        self.payload_blocks += 1
        self._settle()
        self._notify("block")
        if self.payload_blocks % self.cfg.sample_every == 0 or self.payload_blocks == self.cfg.total_payload_blocks:
            self._sample()

    def run(self) -> SegmentedSimulation:
        self.start()
        joins = sorted(self.cfg.join_events, key=lambda e: e.after_blocks)
        while self.payload_blocks < self.cfg.total_payload_blocks:
            joins = self._process_joins(joins)
            self.step_round()
        self._process_joins(joins)
        self.net.run_until(self.all_running, self.cfg.join_tick_budget, self.diagnostics)
        return self

    def _process_joins(self, joins: list[JoinEvent]) -> list[JoinEvent]:
        while joins and joins[0].after_blocks <= self.payload_blocks:
            ev = joins.pop(0)
            self.join(ev.role, ev.wait)
        return joins

    def _sample(self) -> None:
        for nid, node in self.nodes.items():
            ledger = self.ledgers.setdefault(nid, StorageLedger())
            if not ledger.samples or ledger.samples[-1][0] < self.payload_blocks:
                ledger.record(self.payload_blocks, node.store.measured_bytes())

    def _notify(self, event: str) -> None:
        if self.observer is not None:
            self.observer(self, event)

    # -- results -----------------------------------------------------------

    @property
    def segments(self):
        return [self.genesis.store.segment(sid) for sid in self.genesis.store.segment_ids]

    def rows(self) -> list[ReportRow]:
        return [ReportRow(self.label, nid, t, b) for nid, ledger in self.ledgers.items() for t, b in ledger.samples]

    def summary(self) -> dict[str, object]:
        segs = self.segments
        return {
            "mode": self.label,
            "blocks_per_segment": self.chain.blocks_per_segment,
            "payload_blocks": self.payload_blocks,
            "segment_count": len(segs),
            "total_blocks": sum(len(s.blocks) for s in segs),
            "head_hash": self.genesis.head[2].hex(),
            "final_bytes": {nid: n.store.measured_bytes() for nid, n in self.nodes.items()},
            "max_bytes": {nid: ledger.max_bytes for nid, ledger in self.ledgers.items()},
            "bytes_downloaded": {nid: n.bytes_downloaded for nid, n in self.nodes.items()},
            "joins": self.join_log,
            "alarms": {nid: [str(a) for a in n.alarms] for nid, n in self.nodes.items() if n.alarms},
        }


# -- unsegmented comparison -----------------------------------------------------


@dataclass
class UnsegmentedRun:
    stores: dict[str, NodeStore]
    ledgers: dict[str, StorageLedger]
    segment: object
    # payload-block totals at which each checkpointing store took a checkpoint
    checkpoint_totals: dict[str, list[int]] = field(default_factory=dict)

    def rows(self) -> list[ReportRow]:
        return [ReportRow(mode, "compute", t, b) for mode, ledger in self.ledgers.items() for t, b in ledger.samples]


def run_unsegmented(cfg: ScenarioConfig, modes: Iterable[str] = UNSEGMENTED_MODES) -> UnsegmentedRun:
    """Feed the scenario's operation stream to one open-ended segment under each mode."""
    chain = ChainConfig(cfg.chain.chain_id, max(3, cfg.total_payload_blocks))
    retention = {m: RetentionMode.parse(m, cfg.checkpoint_interval) for m in modes}
    stores = {m: NodeStore(r) for m, r in retention.items()}
    ledgers = {m: StorageLedger() for m in retention}
    workload = Workload(cfg.workload)
    segment = start_segment(chain, 1, chain.genesis_hash, ContractRegistry(), 0)
    checkpoints = {m: [] for m, r in retention.items() if r.uses_checkpoints}

    def feed(block, total):
        for m, store in stores.items():
            before = len(store.checkpoint_headers)
            store.ingest_block(block)
            if m in checkpoints and len(store.checkpoint_headers) > before:
                checkpoints[m].append(block.header.level - 1)  # level 2 is payload 1
            if total is not None:
                ledgers[m].record(total, store.measured_bytes())

    for i, block in enumerate(segment.blocks):
        feed(block, 0 if i == len(segment.blocks) - 1 else None)
    mempool = []
    for r in range(1, cfg.total_payload_blocks + 1):
        mempool.extend(workload.round())
        ops, mempool = mempool[:MAX_OPS_PER_BLOCK], mempool[MAX_OPS_PER_BLOCK:]
        block = append_payload_block(segment, ops, r)
        sample = r % cfg.sample_every == 0 or r == cfg.total_payload_blocks
        feed(block, r if sample else None)
    return UnsegmentedRun(stores, ledgers, segment, checkpoints)


# -- experiments ----------------------------------------------------------------


@dataclass
class ExperimentResult:
    config: ScenarioConfig
    rows: list[ReportRow] = field(default_factory=list)
    ledgers: dict[tuple[str, str], StorageLedger] = field(default_factory=dict)
    summaries: dict[str, dict] = field(default_factory=dict)
    simulations: dict[int, SegmentedSimulation] = field(default_factory=dict)
    unsegmented: UnsegmentedRun | None = None
    report_path: Path | None = None
    error: SegchainError | None = None

    def ledger(self, mode: str, node: str) -> StorageLedger:
        return self.ledgers[(mode, node)]


class ExperimentFailed(SegchainError):
    def __init__(self, result: ExperimentResult):
        self.result = result
        super().__init__(f"experiment failed: {result.error} (partial report at {result.report_path})")


def run_scenario(cfg: ScenarioConfig, keep_simulations: bool = False,
                 observer: Callable[[SegmentedSimulation, str], None] | None = None) -> ExperimentResult:
    """Run every requested mode; returns ledgers and summaries without writing files."""
    result = ExperimentResult(cfg)
    try:
        unseg = [m for m in cfg.retention_compare if m in UNSEGMENTED_MODES]
        if unseg:
            run = run_unsegmented(cfg, unseg)
            result.unsegmented = run
            result.rows += run.rows()
            for mode, ledger in run.ledgers.items():
                result.ledgers[(mode, "compute")] = ledger
            if cfg.output_dir is not None and "archive" in run.stores:
                persist_segment(run.segment, Path(cfg.output_dir) / "archive" / "segments")
        if "segmented" in cfg.retention_compare:
            for n in cfg.segment_sizes:
                sim = SegmentedSimulation(cfg, n, observer)
                try:
                    sim.run()
                finally:
                    result.rows += sim.rows()
                    for nid, ledger in sim.ledgers.items():
                        result.ledgers[(sim.label, nid)] = ledger
                result.summaries[sim.label] = sim.summary()
                if cfg.output_dir is not None:
                    seg_dir = Path(cfg.output_dir) / sim.label / "segments"
                    for seg in sim.segments:
                        persist_segment(seg, seg_dir)
                    if cfg.record_trace:
                        (Path(cfg.output_dir) / sim.label / "trace.tsv").write_text("\n".join(sim.net.trace) + "\n")
                if keep_simulations:
                    result.simulations[n] = sim
    except SimTimeout as err:
        result.error = err
    result.rows.sort(key=lambda r: (r.mode, r.node_role, r.total_blocks))
    return result


def run_experiment(cfg: ScenarioConfig) -> Path:
    """Run the scenario and write ``report.csv`` plus segment files under ``output_dir``."""
    if cfg.output_dir is None:
        raise ConfigError("output_dir is required")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = run_scenario(cfg)
    result.report_path = write_report(result.rows, out / "report.csv")
    (out / "summary.json").write_text(json.dumps(result.summaries, indent=2, sort_keys=True) + "\n")
    if result.error is not None:
        raise ExperimentFailed(result)
    return result.report_path


def write_report(rows: Iterable[ReportRow], path: Path) -> Path:
    rows = sorted(rows, key=lambda r: (r.mode, r.node_role, r.total_blocks))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for r in rows:
            w.writerow((r.mode, r.node_role, r.total_blocks, r.bytes))
    return path


def read_report(path: Path) -> list[ReportRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != REPORT_HEADER:
            raise ConfigError(f"{path} is not a segchain report")
        return [ReportRow(r["mode"], r["node_role"], int(r["total_blocks"]), int(r["bytes"])) for r in reader]


def pivot_report(rows: Iterable[ReportRow]) -> tuple[list[str], list[list[object]]]:
    """Wide table: one row per total_blocks, one column per (mode, node)."""
    columns = sorted({f"{r.mode}/{r.node_role}" for r in rows})
    table: dict[int, dict[str, int]] = {}
    for r in rows:
        table.setdefault(r.total_blocks, {})[f"{r.mode}/{r.node_role}"] = r.bytes
    header = ["total_blocks"] + columns
    body = [[t] + [table[t].get(c, "") for c in columns] for t in sorted(table)]
    return header, body


# -- config files --------------------------------------------------------------------


def parse_config_text(text: str, base_dir: Path | None = None) -> ScenarioConfig:
    """Parse flat ``key = value`` lines (``#`` starts a comment)."""
    kv: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        kv[key] = value
    return config_from_mapping(kv, base_dir)


_TOPOLOGY_KEYS = ("num_compute", "num_cold", "num_query")
_WORKLOAD_INT = ("num_clients", "num_accounts", "description_min_len", "description_max_len", "value", "seed",
                 "num_contracts", "contract_state_max_len")
_SCENARIO_INT = ("checkpoint_interval", "total_payload_blocks", "sample_every", "latency_ticks", "ticks_per_block",
                 "join_tick_budget")


def config_from_mapping(kv: dict[str, str], base_dir: Path | None = None) -> ScenarioConfig:
    kv = dict(kv)
    try:
        topo = Topology(**{k: int(kv.pop(k)) for k in _TOPOLOGY_KEYS if k in kv})
        wl = {k: int(kv.pop(k)) for k in _WORKLOAD_INT if k in kv}
        if "contract_update_prob" in kv:
            wl["contract_update_prob"] = float(kv.pop("contract_update_prob"))
        chain_id = bytes.fromhex(kv.pop("chain_id")) if "chain_id" in kv else DEFAULT_CHAIN_ID
        sizes = _int_list(kv.pop("blocks_per_segment", "10"))
        sweep = _int_list(kv.pop("sweep_blocks_per_segment", ""))
        if len(sizes) > 1:
            sweep = sweep or sizes
        scen = {k: int(kv.pop(k)) for k in _SCENARIO_INT if k in kv}
        if "retention_compare" in kv:
            scen["retention_compare"] = tuple(m.strip().lower() for m in kv.pop("retention_compare").split(",")
                                              if m.strip())
        if "join_events" in kv:
            scen["join_events"] = tuple(_parse_join(item) for item in kv.pop("join_events").split(",")
                                        if item.strip())
        if "output_dir" in kv:
            out = Path(kv.pop("output_dir"))
            scen["output_dir"] = out if out.is_absolute() or base_dir is None else base_dir / out
        if "record_trace" in kv:
            scen["record_trace"] = kv.pop("record_trace").lower() in ("1", "true", "yes")
    except ValueError as err:
        raise ConfigError(f"bad config value: {err}") from None
    if kv:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(kv))}")
    return ScenarioConfig(topology=topo, chain=ChainConfig(chain_id, sizes[0]), workload=WorkloadConfig(**wl),
                          sweep_blocks_per_segment=tuple(sweep), **scen)


def load_config(path: str | Path, env: dict[str, str] | None = None) -> ScenarioConfig:
    path = Path(path)
    cfg = parse_config_text(path.read_text(), path.parent)
    env = os.environ if env is None else env
    if env.get("SEGCHAIN_SEED"):
        cfg = cfg.with_seed(int(env["SEGCHAIN_SEED"], 0))
    return cfg


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _parse_join(item: str) -> JoinEvent:
    parts = [p.strip() for p in item.split(":")]
    if len(parts) not in (2, 3):
        raise ConfigError(f"join event {item!r} should be blocks:role[:nowait]")
    try:
        role = NodeRole(parts[1])
    except ValueError:
        raise ConfigError(f"unknown role {parts[1]!r}") from None
    return JoinEvent(int(parts[0]), role, wait=not (len(parts) == 3 and parts[2] == "nowait"))


# -- presets -----------------------------------------------------------------------


def fig3_config(seed: int = 7, output_dir: Path | None = None, **overrides) -> ScenarioConfig:
    """Four retention modes, ten payload blocks per segment, 1000 blocks, 32 clients."""
    base = ScenarioConfig(workload=WorkloadConfig(num_clients=32, seed=seed), total_payload_blocks=1000,
                          output_dir=output_dir)
    return replace(base, **overrides)


def fig4_config(seed: int = 7, output_dir: Path | None = None, **overrides) -> ScenarioConfig:
    """Segment-size sweep over 20, 50, 100 and 250 payload blocks, 1000 blocks total."""
    base = ScenarioConfig(workload=WorkloadConfig(num_clients=32, seed=seed), total_payload_blocks=1000,
                          retention_compare=("archive", "rolling", "segmented"),
                          sweep_blocks_per_segment=(20, 50, 100, 250), output_dir=output_dir)
    return replace(base, **overrides)
