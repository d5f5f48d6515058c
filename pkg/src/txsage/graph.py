"""Heterogeneous weekly transaction graphs.

A :class:`HeteroGraph` is an immutable snapshot built from one week of
transaction records. Directed edges are kept (collapsed per ordered pair) for
edge typing and tabular features; an undirected CSR view backs neighbour
sampling and aggregation.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, TextIO

import numpy as np

__all__ = [
    "NodeType",
    "LEGAL_EDGE_TYPES",
    "RecordError",
    "TransactionRecord",
    "HeteroGraph",
    "build_graph",
    "read_records",
    "write_records",
    "CSV_HEADER",
]

CSV_HEADER = ("sender_id", "sender_type", "receiver_id", "receiver_type", "amount", "timestamp")


class NodeType(str, Enum):
    CORE = "core"
    NONCORE = "noncore"
    FOREIGN = "foreign"
    MERCHANT = "merchant"

    @property
    def code(self) -> int:
        return _TYPE_CODES[self]

    @classmethod
    def from_code(cls, code: int) -> "NodeType":
        return _TYPES[code]


_TYPES = (NodeType.CORE, NodeType.NONCORE, NodeType.FOREIGN, NodeType.MERCHANT)
_TYPE_CODES = {t: i for i, t in enumerate(_TYPES)}

_C, _N, _F, _M = _TYPES
LEGAL_EDGE_TYPES = frozenset({
    (_C, _C), (_C, _N), (_N, _C), (_C, _F), (_F, _C), (_C, _M), (_M, _C),
})


class RecordError(ValueError):
    """A transaction record failed validation.

    ``line`` is the 1-based position of the record in its stream (the file line
    number when the record came from CSV).
    """

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class TransactionRecord:
    sender_id: str
    sender_type: NodeType
    receiver_id: str
    receiver_type: NodeType
    amount: float
    timestamp: int

    def __post_init__(self):
        object.__setattr__(self, "sender_type", NodeType(self.sender_type))
        object.__setattr__(self, "receiver_type", NodeType(self.receiver_type))
        object.__setattr__(self, "amount", float(self.amount))
        object.__setattr__(self, "timestamp", int(self.timestamp))

    def problem(self) -> str | None:
        """Describe why this record is invalid, or return None."""
        if not self.sender_id or not self.receiver_id:
            return "empty account id"
        if not np.isfinite(self.amount) or self.amount < 0:
            return f"amount must be a finite non-negative number, got {self.amount!r}"
        pair = (self.sender_type, self.receiver_type)
        if pair not in LEGAL_EDGE_TYPES:
            return f"illegal edge type ({pair[0].value},{pair[1].value})"
        return None


def _parse_row(row: list[str], line: int) -> TransactionRecord:
    if len(row) != len(CSV_HEADER):
        raise RecordError(line, f"expected {len(CSV_HEADER)} fields, got {len(row)}")
    sid, stype, rid, rtype, amount, ts = row
    try:
        rec = TransactionRecord(sid, NodeType(stype), rid, NodeType(rtype), float(amount), int(ts))
    except ValueError as exc:
        raise RecordError(line, str(exc)) from None
    msg = rec.problem()
    if msg:
        raise RecordError(line, msg)
    return rec


def iter_records(fh: TextIO) -> Iterator[TransactionRecord]:
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None:
        return
    if tuple(h.strip() for h in header) != CSV_HEADER:
        raise RecordError(1, f"bad header {header!r}")
    for row in reader:
        if not row:
            continue
        yield _parse_row(row, reader.line_num)


def read_records(path) -> list[TransactionRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(iter_records(fh))


def format_records(records: Iterable[TransactionRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow([r.sender_id, r.sender_type.value, r.receiver_id, r.receiver_type.value,
                    repr(r.amount), r.timestamp])
    return buf.getvalue()


def write_records(path, records: Iterable[TransactionRecord]) -> None:
    Path(path).write_text(format_records(records), encoding="utf-8")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class HeteroGraph:
    """One week of transactions as a typed graph.

    Nodes are dense indices ``0..N-1`` ordered by account id. Directed edges
    are sorted by ``(src, dst)`` with one row per ordered pair; ``weight`` is
    the summed amount, ``count`` the number of transactions and ``first_ts``
    the earliest timestamp. ``indptr``/``indices``/``nbr_weight`` form the
    undirected CSR view (no self loops, neighbours sorted).
    """

    week: str
    node_ids: tuple[str, ...]
    node_types: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    count: np.ndarray
    first_ts: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    nbr_weight: np.ndarray
    _index: dict = field(default_factory=dict, repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def node_count(self) -> int:
        return len(self.node_ids)

    @property
    def edge_count(self) -> int:
        """Number of undirected edges."""
        return len(self.indices) // 2

    @property
    def directed_edge_count(self) -> int:
        return len(self.src)

    def _check(self, v) -> int:
        v = int(v)
        if not 0 <= v < self.node_count:
            raise IndexError(f"node index {v} out of range for graph with {self.node_count} nodes")
        return v

    def index_of(self, node_id: str) -> int:
        try:
            return self._index[node_id]
        except KeyError:
            raise KeyError(f"unknown node id {node_id!r}") from None

    def __contains__(self, node_id) -> bool:
        return node_id in self._index

    def node_type(self, v) -> NodeType:
        return NodeType.from_code(int(self.node_types[self._check(v)]))

    def degree(self, v) -> int:
        v = self._check(v)
        return int(self.indptr[v + 1] - self.indptr[v])

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, v) -> list[tuple[int, float]]:
        v = self._check(v)
        lo, hi = self.indptr[v], self.indptr[v + 1]
        return [(int(u), float(w)) for u, w in zip(self.indices[lo:hi], self.nbr_weight[lo:hi])]

    def neighbor_array(self, v) -> np.ndarray:
        v = self._check(v)
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def undirected_edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(u, v, weight)`` with ``u < v`` for every undirected edge."""
        if "uedges" not in self._cache:
            rows = np.repeat(np.arange(self.node_count), np.diff(self.indptr))
            keep = rows < self.indices
            self._cache["uedges"] = tuple(
                _frozen(a) for a in (rows[keep], self.indices[keep].copy(), self.nbr_weight[keep].copy()))
        return self._cache["uedges"]

    def is_adjacent(self, a, b) -> np.ndarray:
        """Vectorised undirected adjacency test for index arrays ``a`` and ``b``."""
        if "keys" not in self._cache:
            rows = np.repeat(np.arange(self.node_count, dtype=np.int64), np.diff(self.indptr))
            self._cache["keys"] = _frozen(rows * self.node_count + self.indices)
        keys = self._cache["keys"]
        q = np.asarray(a, dtype=np.int64) * self.node_count + np.asarray(b, dtype=np.int64)
        if len(keys) == 0:
            return np.zeros(q.shape, dtype=bool)
        pos = np.minimum(np.searchsorted(keys, q), len(keys) - 1)
        return keys[pos] == q

    def edge_type(self, i: int) -> tuple[NodeType, NodeType]:
        return (NodeType.from_code(int(self.node_types[self.src[i]])),
                NodeType.from_code(int(self.node_types[self.dst[i]])))

    def to_records(self) -> list[TransactionRecord]:
        """Expand to records that rebuild this exact graph.

        Each collapsed edge yields one record carrying the full weight and
        ``count - 1`` zero-amount records, all stamped with ``first_ts``.
        """
        out = []
        for s, d, w, c, t in zip(self.src, self.dst, self.weight, self.count, self.first_ts):
            sid, did = self.node_ids[s], self.node_ids[d]
            st, dt = NodeType.from_code(int(self.node_types[s])), NodeType.from_code(int(self.node_types[d]))
            out.append(TransactionRecord(sid, st, did, dt, float(w), int(t)))
            out.extend(TransactionRecord(sid, st, did, dt, 0.0, int(t)) for _ in range(int(c) - 1))
        return out

    def canonical(self) -> str:
        """Canonical text form: node registry block, then directed edge block."""
        lines = [f"week {self.week}", f"nodes {self.node_count}"]
        lines += [f"{i},{nid},{NodeType.from_code(int(t)).value}"
                  for i, (nid, t) in enumerate(zip(self.node_ids, self.node_types))]
        lines.append(f"edges {self.directed_edge_count}")
        lines += [f"{s},{d},{w!r},{c},{t}" for s, d, w, c, t in
                  zip(self.src.tolist(), self.dst.tolist(), self.weight.tolist(),
                      self.count.tolist(), self.first_ts.tolist())]
        return "\n".join(lines) + "\n"


def _collapse(keys_a, keys_b, values, *extra):
    """Group rows by ``(a, b)``; sum ``values`` in sorted order, min over extras."""
    order = np.lexsort((values, keys_b, keys_a))
    a, b, v = keys_a[order], keys_b[order], values[order]
    if len(a) == 0:
        return a, b, v, np.zeros(0, dtype=np.int64), *(e[order] for e in extra)
    starts = np.flatnonzero(np.r_[True, (a[1:] != a[:-1]) | (b[1:] != b[:-1])])
    sums = np.add.reduceat(v, starts)
    counts = np.diff(np.r_[starts, len(a)])
    mins = [np.minimum.reduceat(e[order], starts) for e in extra]
    return a[starts], b[starts], sums, counts, *mins


def build_graph(records: Iterable[TransactionRecord], week: str = "") -> HeteroGraph:
    """Validate records and build the snapshot for one week.

    Identical multisets of records give identical graphs in any input order.
    Raises :class:`RecordError` for an illegal record or an account id seen with
    two different node types.
    """
    types: dict[str, NodeType] = {}
    snd, rcv, amt, ts = [], [], [], []
    for line, rec in enumerate(records, 1):
        msg = rec.problem()
        if msg:
            raise RecordError(line, msg)
        for nid, t in ((rec.sender_id, rec.sender_type), (rec.receiver_id, rec.receiver_type)):
            prev = types.setdefault(nid, t)
            if prev is not t:
                raise RecordError(line, f"account {nid!r} seen as both {prev.value} and {t.value}")
        snd.append(rec.sender_id)
        rcv.append(rec.receiver_id)
        amt.append(rec.amount)
        ts.append(rec.timestamp)

    node_ids = tuple(sorted(types))
    index = {nid: i for i, nid in enumerate(node_ids)}
    n = len(node_ids)
    node_types = np.array([types[nid].code for nid in node_ids], dtype=np.int8)

    s = np.array([index[x] for x in snd], dtype=np.int64)
    r = np.array([index[x] for x in rcv], dtype=np.int64)
    a = np.array(amt, dtype=np.float64)
    t = np.array(ts, dtype=np.int64)
    src, dst, weight, count, first_ts = _collapse(s, r, a, t)

    # undirected view: drop self transfers, merge both directions per pair
    keep = src != dst
    lo = np.minimum(src[keep], dst[keep])
    hi = np.maximum(src[keep], dst[keep])
    ua, ub, uw, _ = _collapse(lo, hi, weight[keep])
    rows = np.r_[ua, ub]
    cols = np.r_[ub, ua]
    ws = np.r_[uw, uw]
    order = np.lexsort((cols, rows))
    rows, cols, ws = rows[order], cols[order], ws[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])

    return HeteroGraph(
        week=str(week),
        node_ids=node_ids,
        node_types=_frozen(node_types),
        src=_frozen(src), dst=_frozen(dst), weight=_frozen(weight),
        count=_frozen(count.astype(np.int64)), first_ts=_frozen(first_ts),
        indptr=_frozen(indptr), indices=_frozen(cols.astype(np.int64)), nbr_weight=_frozen(ws),
        _index=index,
    )


def load_graph(path, week: str | None = None) -> HeteroGraph:
    """Read an edge-list CSV; the week label defaults to the file stem."""
    path = Path(path)
    return build_graph(read_records(path), week=path.stem if week is None else week)
