import pytest
from hypothesis import given, strategies as st

from segchain.errors import ConfigError, RoutingError, SimTimeout
from segchain.netsim import NetParams, Network, run_until, send, step


def recording_net(peers, latency=1, trace=False):
    net = Network(NetParams(latency, seed=1), record_trace=trace)
    log = []
    for p in peers:
        net.register(p, lambda env, p=p: log.append((net.now, env.sender, p, env.message)))
    return net, log


def test_latency():
    net, log = recording_net(["a", "b"], latency=2)
    net.now = 5
    env = send(net, "a", "b", "hi")
    assert env.deliver_at == 7
    step(net)
    assert log == [(7, "a", "b", "hi")]


def test_fifo_per_pair():
    net, log = recording_net(["a", "b"])
    for i in range(5):
        net.send("a", "b", i)
    step(net)
    assert [m for *_, m in log] == [0, 1, 2, 3, 4]


def test_unknown_and_removed_peer():
    net, _ = recording_net(["a", "b"])
    net.unregister("b")
    with pytest.raises(RoutingError):
        net.send("a", "b", 1)
    with pytest.raises(RoutingError):
        net.send("zz", "a", 1)


def test_empty_step():
    net, _ = recording_net([])
    assert step(net) == [] and net.now == 0


def test_tie_break_by_sender_then_sequence():
    net, log = recording_net(["a", "b", "c"])
    net.send("b", "c", "b0")
    net.send("a", "c", "a0")
    net.send("b", "c", "b1")
    net.send("a", "c", "a1")
    step(net)
    assert [m for *_, m in log] == ["a0", "a1", "b0", "b1"]


def test_run_until_already_true():
    net, _ = recording_net(["a"])
    net.send("a", "a", 1)
    assert run_until(net, lambda: True) == 0
    assert net.pending == 1


def test_run_until_timeout_at_budget():
    net, _ = recording_net(["a"])
    with pytest.raises(SimTimeout) as ei:
        net.run_until(lambda: False, max_ticks=30, diagnostics=lambda: {"a": "idle"})
    assert net.now == 30 and ei.value.diagnostics == {"a": "idle"}


def test_ping_pong_converges():
    net = Network(NetParams(1))
    count = {"n": 0}

    def bounce(env):
        count["n"] += 1
        if count["n"] < 10:
            net.send(env.recipient, env.sender, None)

    net.register("a", bounce)
    net.register("b", bounce)
    net.send("a", "b", None)
    assert net.run_until(lambda: count["n"] == 10) == 10


def test_bad_latency():
    with pytest.raises(ConfigError):
        NetParams(0)


def test_trace_format():
    net, _ = recording_net(["a", "b"], trace=True)
    net.send("a", "b", ValueError())
    step(net)
    assert net.trace == ["1\ta\tb\tValueError"]


def _scenario(seed, script):
    net = Network(NetParams(1, seed), record_trace=True)
    peers = ["p0", "p1", "p2", "p3"]

    def make(p):
        def h(env):
            if env.message > 0:
                net.send(p, peers[(peers.index(p) + env.message) % 4], env.message - 1)
        return h

    for p in peers:
        net.register(p, make(p))
    for src, dst, hops in script:
        net.send(peers[src], peers[dst], hops)
    net.drain(10_000)
    return net.trace, net.delivered


@given(seed=st.integers(0, 2**63), script=st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3),
                                                             st.integers(0, 6)), max_size=12))
def test_identical_scenarios_identical_traces(seed, script):
    t1, d1 = _scenario(seed, script)
    t2, d2 = _scenario(seed, script)
    assert t1 == t2
    assert d1 == sum(h + 1 for *_, h in script)  # no spontaneous or lost messages
