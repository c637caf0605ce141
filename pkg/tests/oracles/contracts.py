"""Brute-force contract interpreter: walk operations in order, last writer wins."""


def interpret(initial: list[tuple[bytes, bytes]], ops: list[tuple[str, bytes, bytes]]) -> list[tuple[bytes, bytes]]:
    state = list(initial)
    for kind, cid, value in ops:
        if kind != "update":
            continue
        state = [(c, v) for c, v in state if c != cid] + [(cid, value)]
    return sorted(state)
