"""Two-layer GraphSAGE with a mean aggregator.

Layer rule, per seed ``s`` with sampled hop-1 set ``N(s)`` and, for every
layer-1 node ``w``, a sampled hop-2 set ``N(w)``::

    h(w) = relu(W1 @ mean({x_w} | {x_n : n in N(w)}) + b1)
    z(s) = out(W2 @ mean({h_s} | {h_n : n in N(s)}) + b2)

``out`` is unit L2 normalisation by default; the logistic sigmoid (outputs in
``(0, 1)``) and the identity are also available. Inputs ``x`` are hash-derived
vectors in ``[0, 1)``, standardised to zero mean and unit variance, so any node
in any week has well-defined inputs.
"""
from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import HeteroGraph, NodeType
from .sampler import SamplerConfig, sample_neighbors_many
from ._rng import derive

__all__ = [
    "ModelConfig",
    "ModelParams",
    "EmbeddingTable",
    "ComputeTree",
    "OUTPUT_ACTIVATIONS",
    "L2_EPS",
    "node_features",
    "feature_matrix",
    "standardize",
    "input_matrix",
    "init_params",
    "aggregate_mean",
    "sample_tree",
    "forward",
    "forward_tree",
    "backward_tree",
    "embed_graph",
    "embed_isolated",
    "save_checkpoint",
    "load_checkpoint",
    "write_embeddings",
    "read_embeddings",
]

OUTPUT_ACTIVATIONS = ("l2", "sigmoid", "identity")
_ACT_IDS = {"relu": 1, "sigmoid": 2, "identity": 3, "l2": 4}
_CKPT_MAGIC = b"TXSAGE-CKPT 1\n"
_CKPT_HEADER = "<5q2B"
# z = a / sqrt(|a|^2 + L2_EPS); keeps an all-zero pre-activation finite
L2_EPS = 1e-12


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 32
    hidden_dim: int = 64
    output_dim: int = 32
    output_activation: str = "l2"

    def __post_init__(self):
        if min(self.input_dim, self.hidden_dim, self.output_dim) < 1:
            raise ValueError(f"model dimensions must be >= 1: {self}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")


@dataclass
class ModelParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    output_activation: str = "l2"

    NAMES = ("W1", "b1", "W2", "b2")

    @property
    def config(self) -> ModelConfig:
        return ModelConfig(self.W1.shape[1], self.W1.shape[0], self.W2.shape[0],
                           self.output_activation)

    def arrays(self) -> tuple[np.ndarray, ...]:
        return (self.W1, self.b1, self.W2, self.b2)

    def copy(self) -> "ModelParams":
        return self.map(np.copy)

    def map(self, fn, other: "ModelParams | None" = None) -> "ModelParams":
        if other is None:
            arrays = (fn(a) for a in self.arrays())
        else:
            arrays = (fn(a, b) for a, b in zip(self.arrays(), other.arrays()))
        return ModelParams(*arrays, output_activation=self.output_activation)

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())


@dataclass
class EmbeddingTable:
    """Embeddings for a set of node indices of one weekly graph."""

    nodes: np.ndarray
    vectors: np.ndarray
    week: str = ""

    def __post_init__(self):
        self._row = {int(v): i for i, v in enumerate(self.nodes)}

    def __len__(self):
        return len(self.nodes)

    def __contains__(self, v) -> bool:
        return int(v) in self._row

    def __getitem__(self, v) -> np.ndarray:
        return self.vectors[self._row[int(v)]]

    def dense(self, n: int) -> np.ndarray:
        """Return an ``n x d`` matrix indexed by node; every node must be present."""
        if len(self.nodes) != n or not np.array_equal(np.sort(self.nodes), np.arange(n)):
            missing = sorted(set(range(n)) - set(self._row))
            raise KeyError(f"embedding table lacks nodes, e.g. {missing[:5]}")
        out = np.empty((n, self.vectors.shape[1]))
        out[self.nodes] = self.vectors
        return out


def node_features(node_id: str, node_type: NodeType | str, dim: int) -> np.ndarray:
    """Deterministic vector in ``[0, 1)**dim`` from a SHAKE-256 hash of type and id."""
    key = f"{NodeType(node_type).value}\x1f{node_id}".encode("utf-8")
    raw = np.frombuffer(hashlib.shake_256(key).digest(8 * dim), dtype="<u8")
    return (raw >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


def standardize(x) -> np.ndarray:
    """Map uniform ``[0, 1)`` features to zero mean and unit variance."""
    return (np.asarray(x, dtype=np.float64) - 0.5) * np.sqrt(12.0)


def feature_matrix(g: HeteroGraph, dim: int) -> np.ndarray:
    """Raw ``[0, 1)`` features for every node of ``g`` (cached per graph)."""
    key = ("features", dim)
    if key not in g._cache:
        X = np.empty((g.node_count, dim))
        for i, (nid, t) in enumerate(zip(g.node_ids, g.node_types)):
            X[i] = node_features(nid, NodeType.from_code(int(t)), dim)
        X.setflags(write=False)
        g._cache[key] = X
    return g._cache[key]


def input_matrix(g: HeteroGraph, dim: int) -> np.ndarray:
    """Standardised network inputs for every node of ``g`` (cached per graph)."""
    key = ("inputs", dim)
    if key not in g._cache:
        X = standardize(feature_matrix(g, dim))
        X.setflags(write=False)
        g._cache[key] = X
    return g._cache[key]


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Weights uniform in +-1/sqrt(fan_in), zero biases."""
    rng = derive(seed, "init_params")
    b_in = 1.0 / np.sqrt(config.input_dim)
    b_hid = 1.0 / np.sqrt(config.hidden_dim)
    return ModelParams(
        W1=rng.uniform(-b_in, b_in, size=(config.hidden_dim, config.input_dim)),
        b1=np.zeros(config.hidden_dim),
        W2=rng.uniform(-b_hid, b_hid, size=(config.output_dim, config.hidden_dim)),
        b2=np.zeros(config.output_dim),
        output_activation=config.output_activation,
    )


def aggregate_mean(self_vec, neighbor_vecs) -> np.ndarray:
    self_vec = np.asarray(self_vec, dtype=np.float64)
    vecs = [self_vec] + [np.asarray(v, dtype=np.float64) for v in neighbor_vecs]
    for v in vecs[1:]:
        if v.shape != self_vec.shape:
            raise ValueError(f"dimension mismatch: {v.shape} vs {self_vec.shape}")
    return np.mean(vecs, axis=0)


@dataclass
class ComputeTree:
    """Sampled two-hop computation structure for a set of seeds.

    ``seeds``, ``layer1`` and ``inputs`` are sorted unique node indices with
    ``seeds`` within ``layer1`` within ``inputs``. ``agg_in`` (|layer1| x |inputs|) and
    ``agg_out`` (|seeds| x |layer1|) are row-stochastic mean operators over
    ``{self} | sampled neighbours``.
    """

    seeds: np.ndarray
    layer1: np.ndarray
    inputs: np.ndarray
    agg_in: sp.csr_matrix
    agg_out: sp.csr_matrix

    def seed_rows(self, nodes) -> np.ndarray:
        return np.searchsorted(self.seeds, nodes)


def _mean_operator(targets, ptr, flat, columns) -> sp.csr_matrix:
    counts = np.diff(ptr)
    n = len(targets)
    rows = np.r_[np.arange(n), np.repeat(np.arange(n), counts)]
    cols = np.searchsorted(columns, np.r_[targets, flat])
    vals = (1.0 / (counts + 1.0))[rows]
    m = sp.csr_matrix((vals, (rows, cols)), shape=(n, len(columns)))
    m.sort_indices()
    return m


def sample_tree(g: HeteroGraph, seeds, sampler_cfg: SamplerConfig,
                rng: np.random.Generator) -> ComputeTree:
    if len(sampler_cfg.fanouts) != 2:
        raise ValueError("the model has exactly two layers; need two fanouts")
    seeds = np.unique(np.asarray(seeds, dtype=np.int64))
    if len(seeds) and (seeds[0] < 0 or seeds[-1] >= g.node_count):
        raise IndexError("seed index out of range")
    f1, f2 = sampler_cfg.fanouts
    ptr1, flat1 = sample_neighbors_many(g, seeds, f1, sampler_cfg.weighted, rng)
    layer1 = np.union1d(seeds, flat1)
    ptr2, flat2 = sample_neighbors_many(g, layer1, f2, sampler_cfg.weighted, rng)
    inputs = np.union1d(layer1, flat2)
    return ComputeTree(
        seeds=seeds, layer1=layer1, inputs=inputs,
        agg_in=_mean_operator(layer1, ptr2, flat2, inputs),
        agg_out=_mean_operator(seeds, ptr1, flat1, layer1),
    )


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _l2_scale(a):
    return np.sqrt(np.einsum("nd,nd->n", a, a) + L2_EPS)[:, None]


def forward_tree(tree: ComputeTree, params: ModelParams, X: np.ndarray):
    """Embeddings for ``tree.seeds`` plus the activations needed for backprop.

    ``X`` holds the network inputs of every graph node (see :func:`input_matrix`).
    """
    m1 = tree.agg_in @ X[tree.inputs]
    a1 = m1 @ params.W1.T + params.b1
    h1 = np.maximum(a1, 0.0)
    m2 = tree.agg_out @ h1
    a2 = m2 @ params.W2.T + params.b2
    act = params.output_activation
    if act == "l2":
        z = a2 / _l2_scale(a2)
    elif act == "sigmoid":
        z = _sigmoid(a2)
    else:
        z = a2
    return z, (m1, a1, m2, a2, z)


def backward_tree(tree: ComputeTree, params: ModelParams, cache, dz: np.ndarray) -> ModelParams:
    """Gradients of a scalar loss given ``dz = dL/dz`` for the tree's seeds."""
    m1, a1, m2, a2, z = cache
    act = params.output_activation
    if act == "l2":
        s = _l2_scale(a2)
        da2 = (dz - a2 * (np.einsum("nd,nd->n", a2, dz)[:, None] / s ** 2)) / s
    elif act == "sigmoid":
        da2 = dz * z * (1.0 - z)
    else:
        da2 = dz
    gW2 = da2.T @ m2
    gb2 = da2.sum(axis=0)
    dh1 = tree.agg_out.T @ (da2 @ params.W2)
    da1 = dh1 * (a1 > 0)
    gW1 = da1.T @ m1
    gb1 = da1.sum(axis=0)
    return ModelParams(gW1, gb1, gW2, gb2, output_activation=act)


def forward(g: HeteroGraph, params: ModelParams, seeds, sampler_cfg: SamplerConfig,
            rng: np.random.Generator, inputs: np.ndarray | None = None) -> EmbeddingTable:
    X = input_matrix(g, params.config.input_dim) if inputs is None else inputs
    tree = sample_tree(g, seeds, sampler_cfg, rng)
    z, _ = forward_tree(tree, params, X)
    return EmbeddingTable(tree.seeds, z, week=g.week)


def embed_graph(g: HeteroGraph, params: ModelParams, sampler_cfg: SamplerConfig,
                chunk: int = 4096) -> EmbeddingTable:
    """Inference over every node of ``g``; chunk ``i`` draws from stream ``(seed, week, i)``."""
    X = input_matrix(g, params.config.input_dim)
    parts = []
    for i in range(0, g.node_count, chunk):
        sel = np.arange(i, min(i + chunk, g.node_count))
        rng = derive(sampler_cfg.seed, "infer", g.week, i // chunk)
        parts.append(forward(g, params, sel, sampler_cfg, rng, inputs=X).vectors)
    vectors = np.vstack(parts) if parts else np.zeros((0, params.config.output_dim))
    return EmbeddingTable(np.arange(g.node_count), vectors, week=g.week)


def embed_isolated(params: ModelParams, nodes) -> np.ndarray:
    """Embeddings of ``(id, type)`` pairs that have no edges this week.

    With empty neighbourhoods both mean aggregations reduce to the node's own
    vector, so no sampling is involved.
    """
    dim = params.config.input_dim
    X = np.array([standardize(node_features(nid, t, dim)) for nid, t in nodes]).reshape(-1, dim)
    a2 = np.maximum(X @ params.W1.T + params.b1, 0.0) @ params.W2.T + params.b2
    if params.output_activation == "l2":
        return a2 / _l2_scale(a2)
    if params.output_activation == "sigmoid":
        return _sigmoid(a2)
    return a2


def save_checkpoint(path, params: ModelParams, seed: int = 0) -> None:
    """Versioned header, then W1, b1, W2, b2 as little-endian float64, row-major."""
    cfg = params.config
    header = struct.pack(_CKPT_HEADER, 1, cfg.input_dim, cfg.hidden_dim, cfg.output_dim, seed,
                         _ACT_IDS["relu"], _ACT_IDS[cfg.output_activation])
    buf = io.BytesIO()
    buf.write(_CKPT_MAGIC)
    buf.write(header)
    for a in params.arrays():
        buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> tuple[ModelParams, int]:
    """Return ``(params, seed)`` from a checkpoint file."""
    data = Path(path).read_bytes()
    if not data.startswith(_CKPT_MAGIC):
        raise ValueError(f"{path}: not a txsage checkpoint")
    off = len(_CKPT_MAGIC)
    if len(data) < off + struct.calcsize(_CKPT_HEADER):
        raise ValueError(f"{path}: truncated checkpoint header")
    version, din, dhid, dout, seed, act1, act2 = struct.unpack_from(_CKPT_HEADER, data, off)
    names = {v: k for k, v in _ACT_IDS.items()}
    if version != 1 or act1 != _ACT_IDS["relu"] or names.get(act2) not in OUTPUT_ACTIVATIONS:
        raise ValueError(f"{path}: unsupported checkpoint version or activations")
    if min(din, dhid, dout) < 1:
        raise ValueError(f"{path}: bad dimensions in checkpoint header")
    off += struct.calcsize(_CKPT_HEADER)
    arrays = []
    for shape in [(dhid, din), (dhid,), (dout, dhid), (dout,)]:
        n = int(np.prod(shape))
        if off + 8 * n > len(data):
            raise ValueError(f"{path}: truncated checkpoint")
        arrays.append(np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64))
        off += 8 * n
    if off != len(data):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return ModelParams(*arrays, output_activation=names[act2]), seed


def write_embeddings(path, g: HeteroGraph, table: EmbeddingTable) -> None:
    d = table.vectors.shape[1]
    lines = ["node_id,node_type," + ",".join(f"e{i}" for i in range(d))]
    for v, row in zip(table.nodes, table.vectors):
        t = NodeType.from_code(int(g.node_types[v])).value
        lines.append(f"{g.node_ids[v]},{t}," + ",".join(f"{x:.9g}" for x in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_embeddings(path) -> tuple[list[str], list[NodeType], np.ndarray]:
    ids, types, rows = [], [], []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        if header[:2] != ["node_id", "node_type"]:
            raise ValueError(f"{path}: bad embedding header")
        for lineno, line in enumerate(fh, 2):
            parts = line.rstrip("\n").split(",")
            if len(parts) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields")
            ids.append(parts[0])
            types.append(NodeType(parts[1]))
            rows.append([float(x) for x in parts[2:]])
    return ids, types, np.array(rows, dtype=np.float64).reshape(-1, len(header) - 2)
