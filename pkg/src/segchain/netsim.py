"""Deterministic discrete-event message passing.

Every link has the same fixed latency and never drops or reorders
messages. Deliveries due at the same tick run in
``(deliver_at, sender, per-sender sequence)`` order, so a run is a pure
function of the scenario and :class:`NetParams`.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from typing import Any, Callable

from .errors import ConfigError, RoutingError, SimTimeout

Handler = Callable[["Envelope"], None]


@dataclass(frozen=True)
class NetParams:
    latency_ticks: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.latency_ticks < 1:
            raise ConfigError("latency_ticks must be >= 1")


@dataclass(frozen=True)
class Envelope:
    sender: str
    recipient: str
    message: Any
    sent_at: int
    deliver_at: int
    seq: int

    @property
    def sort_key(self) -> tuple[int, str, int]:
        return (self.deliver_at, self.sender, self.seq)

    def trace_line(self) -> str:
        return f"{self.deliver_at}\t{self.sender}\t{self.recipient}\t{type(self.message).__name__}"


@dataclass
class Network:
    params: NetParams = field(default_factory=NetParams)
    record_trace: bool = False
    now: int = 0
    trace: list[str] = field(default_factory=list)
    delivered: int = 0

    def __post_init__(self):
        self.rng = random.Random(self.params.seed)
        self._handlers: dict[str, Handler] = {}
        self._queue: list[tuple[tuple[int, str, int], Envelope]] = []
        self._seq: dict[str, int] = {}

    # -- membership --------------------------------------------------------

    def register(self, peer_id: str, handler: Handler) -> None:
        self._handlers[peer_id] = handler

    def unregister(self, peer_id: str) -> None:
        self._handlers.pop(peer_id, None)

    def __contains__(self, peer_id: str) -> bool:
        return peer_id in self._handlers

    @property
    def peers(self) -> list[str]:
        return sorted(self._handlers)

    # -- traffic -----------------------------------------------------------

    def send(self, sender: str, recipient: str, message: Any) -> Envelope:
        if sender not in self._handlers:
            raise RoutingError(f"unknown sender {sender!r}")
        if recipient not in self._handlers:
            raise RoutingError(f"unknown recipient {recipient!r}")
        seq = self._seq.get(sender, 0)
        self._seq[sender] = seq + 1
        env = Envelope(sender, recipient, message, self.now, self.now + self.params.latency_ticks, seq)
        heapq.heappush(self._queue, (env.sort_key, env))
        return env

    @property
    def pending(self) -> int:
        return len(self._queue)

    @property
    def next_event_at(self) -> int | None:
        return self._queue[0][0][0] if self._queue else None

    def step(self) -> list[Envelope]:
        """Advance to the next scheduled tick and deliver everything due then."""
        if not self._queue:
            return []
        tick = self._queue[0][0][0]
        self.now = tick
        out = []
        # handlers only schedule at now + latency >= tick + 1, so the batch is closed
        while self._queue and self._queue[0][0][0] == tick:
            _, env = heapq.heappop(self._queue)
            handler = self._handlers.get(env.recipient)
            if handler is None:
                continue
            self.delivered += 1
            if self.record_trace:
                self.trace.append(env.trace_line())
            out.append(env)
            handler(env)
        return out

    def run_until(self, condition: Callable[[], bool], max_ticks: int = 1000,
                  diagnostics: Callable[[], object] | None = None) -> int:
        """Step until ``condition()`` holds; raise SimTimeout after ``max_ticks``."""
        deadline = self.now + max_ticks
        while not condition():
            nxt = self.next_event_at
            if nxt is None or nxt > deadline:
                self.now = deadline
                raise SimTimeout(f"condition not reached by tick {deadline}",
                                 diagnostics() if diagnostics else None)
            self.step()
        return self.now

    def drain(self, max_ticks: int = 1000) -> int:
        return self.run_until(lambda: not self._queue, max_ticks)


def send(net: Network, sender: str, recipient: str, message: Any) -> Envelope:
    return net.send(sender, recipient, message)


def step(net: Network) -> list[Envelope]:
    return net.step()


def run_until(net: Network, condition: Callable[[], bool], max_ticks: int = 1000) -> int:
    return net.run_until(condition, max_ticks)
