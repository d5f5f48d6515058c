import numpy as np
import pytest
from hypothesis import strategies as st

from txsage.graph import NodeType, TransactionRecord, build_graph


def rec(a, b, amount=1.0, ts=0, ta="core", tb="core"):
    return TransactionRecord(a, NodeType(ta), b, NodeType(tb), amount, ts)


def core_graph(edges, week="w", isolated=()):
    """Core-only graph from ``(a, b)`` id pairs; ``isolated`` ids get a self transfer."""
    records = [rec(str(a), str(b)) for a, b in edges]
    records += [rec(str(v), str(v)) for v in isolated]
    return build_graph(records, week=week)


def numbered(n):
    return [f"n{i:02d}" for i in range(n)]


def path_graph(n):
    ids = numbered(n)
    return core_graph(zip(ids, ids[1:]))


def star_graph(leaves):
    ids = numbered(leaves + 1)
    return core_graph((ids[0], x) for x in ids[1:])


def clique_edges(ids):
    return [(a, b) for i, a in enumerate(ids) for b in ids[i + 1:]]


@st.composite
def random_graphs(draw, max_nodes=12, min_nodes=2):
    """Core-only graphs on ``n`` labelled nodes; every node appears (isolated ones via self loops)."""
    n = draw(st.integers(min_nodes, max_nodes))
    ids = numbered(n)
    pairs = [(a, b) for i, a in enumerate(ids) for b in ids[i + 1:]]
    mask = draw(st.lists(st.booleans(), min_size=len(pairs), max_size=len(pairs)))
    edges = [p for p, m in zip(pairs, mask) if m]
    used = {v for e in edges for v in e}
    return core_graph(edges, isolated=[v for v in ids if v not in used])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one acceptance line; they are printed together after the run."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(number: int, ok: bool, detail: str) -> None:
        lines.append((number, f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"))

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
