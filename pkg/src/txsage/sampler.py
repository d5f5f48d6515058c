"""Seeded neighbourhood, positive-edge and negative-node sampling.

All samplers are stateless: randomness comes from the generator passed in.
The ``*_many`` variants are the vectorised workhorses used by the model and
trainer; the single-node functions are thin wrappers over them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import HeteroGraph

__all__ = [
    "SamplerConfig",
    "SamplingError",
    "sample_neighbors",
    "sample_neighbors_many",
    "sample_positive_edges",
    "sample_negatives",
    "sample_negatives_many",
    "sample_nonedges",
]


class SamplingError(ValueError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    """``fanouts[i]`` caps the neighbours drawn at hop ``i + 1`` from a seed."""

    fanouts: tuple[int, ...] = (10, 10)
    weighted: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "fanouts", tuple(int(f) for f in self.fanouts))
        if not self.fanouts or min(self.fanouts) < 1:
            raise ValueError(f"fanouts must be positive, got {self.fanouts}")


def sample_neighbors_many(g: HeteroGraph, nodes, fanout: int, weighted: bool,
                          rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Sample up to ``fanout`` neighbours for each node, without replacement.

    Returns ``(ptr, flat)``: the neighbours of ``nodes[i]`` are
    ``flat[ptr[i]:ptr[i + 1]]``, sorted. Nodes with degree <= fanout keep their
    whole neighbourhood and consume no randomness.
    """
    if fanout < 1:
        raise ValueError("fanout must be >= 1")
    nodes = np.asarray(nodes, dtype=np.int64)
    if len(nodes) and (nodes.min() < 0 or nodes.max() >= g.node_count):
        raise IndexError("node index out of range")
    start = g.indptr[nodes]
    deg = g.indptr[nodes + 1] - start
    take = np.minimum(deg, fanout)
    ptr = np.zeros(len(nodes) + 1, dtype=np.int64)
    np.cumsum(take, out=ptr[1:])
    flat = np.empty(ptr[-1], dtype=np.int64)

    full = np.flatnonzero(deg <= fanout)
    if len(full):
        lens = deg[full]
        offs = np.repeat(start[full] - ptr[full], lens)
        dest = np.repeat(ptr[full], lens) + _ragged_arange(lens)
        flat[dest] = g.indices[dest + offs]

    big = np.flatnonzero(deg > fanout)
    if len(big):
        if weighted:
            picks = _weighted_picks(g, start[big], deg[big], fanout, rng)
        else:
            picks = _floyd_picks(deg[big], fanout, rng)
        picks.sort(axis=1)
        chosen = g.indices[start[big][:, None] + picks]
        flat[(ptr[big][:, None] + np.arange(fanout)).ravel()] = chosen.ravel()
    return ptr, flat


def _ragged_arange(lens: np.ndarray) -> np.ndarray:
    total = int(lens.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    ends = np.cumsum(lens)
    return np.arange(total, dtype=np.int64) - np.repeat(ends - lens, lens)


def _floyd_picks(deg: np.ndarray, k: int, rng) -> np.ndarray:
    # Floyd's algorithm, one row per node: uniform k-subsets of range(deg)
    out = np.empty((len(deg), k), dtype=np.int64)
    for t in range(k):
        j = deg - k + t
        r = np.minimum((rng.random(len(deg)) * (j + 1)).astype(np.int64), j)
        dup = (out[:, :t] == r[:, None]).any(axis=1)
        out[:, t] = np.where(dup, j, r)
    return out


def _weighted_picks(g, start, deg, k, rng) -> np.ndarray:
    # Efraimidis-Spirakis: keep the k largest u**(1/w), i.e. log(u)/w
    seg = np.repeat(np.arange(len(deg)), deg)
    local = _ragged_arange(deg)
    w = g.nbr_weight[np.repeat(start, deg) + local]
    u = rng.random(len(w))
    with np.errstate(divide="ignore"):
        keys = np.where(w > 0, np.log(u) / np.where(w > 0, w, 1.0), -np.inf)
    order = np.lexsort((-keys, seg))
    rank = np.empty_like(order)
    rank[order] = _ragged_arange(deg)
    sel = rank < k
    out = np.empty((len(deg), k), dtype=np.int64)
    out[seg[sel], rank[sel]] = local[sel]
    return out


def sample_neighbors(g: HeteroGraph, v: int, fanout: int, weighted: bool,
                     rng: np.random.Generator) -> np.ndarray:
    g._check(v)
    _, flat = sample_neighbors_many(g, [v], fanout, weighted, rng)
    return flat


def sample_positive_edges(g: HeteroGraph, batch_size: int, rng: np.random.Generator,
                          weighted: bool = False) -> np.ndarray:
    """Draw ``batch_size`` undirected edges i.i.d. (uniform or by weight) as ``(u, v)`` rows, u < v."""
    if g.edge_count == 0:
        raise SamplingError("graph has no edges to sample")
    u, v, w = g.undirected_edges()
    if batch_size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if weighted:
        cdf = np.cumsum(w)
        idx = np.searchsorted(cdf, rng.random(batch_size) * cdf[-1], side="right")
        idx = np.minimum(idx, len(w) - 1)
    else:
        idx = rng.integers(0, len(u), size=batch_size)
    return np.stack([u[idx], v[idx]], axis=1)


def sample_negatives_many(g: HeteroGraph, anchors, count: int,
                          rng: np.random.Generator) -> np.ndarray:
    """For every anchor draw ``count`` nodes uniformly from its non-neighbours.

    Draws are with replacement; rejected candidates (self or neighbour) are
    redrawn until none remain.
    """
    anchors = np.asarray(anchors, dtype=np.int64)
    n = g.node_count
    if len(anchors):
        deg = g.indptr[anchors + 1] - g.indptr[anchors]
        bad = np.flatnonzero(n - 1 - deg < 1)
        if len(bad):
            raise SamplingError(f"node {int(anchors[bad[0]])} has no non-neighbour to sample")
    out = rng.integers(0, n, size=(len(anchors), count))
    a = np.broadcast_to(anchors[:, None], out.shape)
    redo = np.flatnonzero(((out == a) | g.is_adjacent(a, out)).ravel())
    flat = out.ravel()
    af = a.ravel()
    while len(redo):
        flat[redo] = rng.integers(0, n, size=len(redo))
        still = (flat[redo] == af[redo]) | g.is_adjacent(af[redo], flat[redo])
        redo = redo[still]
    return flat.reshape(out.shape)


def sample_negatives(g: HeteroGraph, u: int, count: int, rng: np.random.Generator) -> np.ndarray:
    g._check(u)
    return sample_negatives_many(g, [u], count, rng)[0]


def sample_nonedges(g: HeteroGraph, count: int, rng: np.random.Generator,
                    nodes=None) -> np.ndarray:
    """Distinct unordered non-adjacent pairs ``(u, v)``, ``u < v``, in draw order.

    ``nodes`` restricts both endpoints to a subset (default: all nodes).
    """
    pool = np.arange(g.node_count) if nodes is None else np.unique(np.asarray(nodes, dtype=np.int64))
    k = len(pool)
    inside = np.zeros(g.node_count, dtype=bool)
    inside[pool] = True
    eu, ev, _ = g.undirected_edges()
    internal = int(np.count_nonzero(inside[eu] & inside[ev]))
    available = k * (k - 1) // 2 - internal
    if count > available:
        raise SamplingError(f"requested {count} non-edges but only {available} exist")
    if count == 0:
        return np.zeros((0, 2), dtype=np.int64)

    if available <= 4 * count and k <= 4000:
        iu, iv = np.triu_indices(k, 1)
        a, b = pool[iu], pool[iv]
        mask = ~g.is_adjacent(a, b)
        cand = np.stack([a[mask], b[mask]], axis=1)
        return cand[rng.choice(len(cand), size=count, replace=False)]

    seen: set[int] = set()
    out: list[tuple[int, int]] = []
    n = g.node_count
    while len(out) < count:
        m = max(64, 2 * (count - len(out)))
        a = pool[rng.integers(0, k, size=m)]
        b = pool[rng.integers(0, k, size=m)]
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        ok = (lo != hi) & ~g.is_adjacent(lo, hi)
        for x, y in zip(lo[ok].tolist(), hi[ok].tolist()):
            key = x * n + y
            if key in seen:
                continue
            seen.add(key)
            out.append((x, y))
            if len(out) == count:
                break
    return np.array(out, dtype=np.int64)
