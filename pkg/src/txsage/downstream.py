"""Money-mule classification benchmark.

A logistic regression on tabular account features is compared against the
same model with embedding columns appended. Training uses week ``w`` and
scoring uses week ``w + 1``; both are ranked by PR-AUC (average precision)
and precision@k.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .graph import HeteroGraph, NodeType, build_graph
from .model import EmbeddingTable, ModelConfig, embed_graph, embed_isolated
from .sampler import SamplerConfig
from .synth import (Account, MuleConfig, PopulationConfig, generate_population, generate_week,
                    inject_mules)
from .trainer import TrainConfig, train
from ._rng import derive

log = logging.getLogger(__name__)

__all__ = [
    "TABULAR_FEATURES",
    "DEFAULT_KS",
    "FeatureRow",
    "LogRegConfig",
    "LogisticModel",
    "EvalResult",
    "Comparison",
    "MuleBenchResult",
    "build_features",
    "stack_rows",
    "fit_logreg",
    "precision_at_k",
    "pr_auc",
    "evaluate_scores",
    "compare",
    "mule_benchmark",
    "write_results",
]

TABULAR_FEATURES = ("in_degree", "out_degree", "in_amount", "out_amount",
                    "distinct_counterparties", "merchant_tx", "new_counterparties")
DEFAULT_KS = (20, 50, 200)


@dataclass(frozen=True)
class FeatureRow:
    node_id: str
    features: tuple[float, ...]
    label: bool


def build_features(g: HeteroGraph, truth: dict[str, Account],
                   embeddings: EmbeddingTable | None = None,
                   previous: HeteroGraph | None = None,
                   absent: dict[str, np.ndarray] | None = None) -> list[FeatureRow]:
    """One row per Core account in ``truth``, sorted by id.

    Degrees and amounts count transactions (parallel transfers included).
    A counterparty is new when it was not a neighbour in ``previous``; with
    no previous week every counterparty is new. Accounts absent from ``g``
    get all-zero tabular features; when ``embeddings`` is given their vectors
    must come from ``absent`` (see :func:`txsage.model.embed_isolated`).
    """
    ids = sorted(nid for nid, a in truth.items() if a.node_type is NodeType.CORE)
    n = g.node_count
    in_deg = np.bincount(g.dst, weights=g.count, minlength=n)
    out_deg = np.bincount(g.src, weights=g.count, minlength=n)
    in_amt = np.bincount(g.dst, weights=g.weight, minlength=n)
    out_amt = np.bincount(g.src, weights=g.weight, minlength=n)
    merch = g.node_types == NodeType.MERCHANT.code
    m_tx = (np.bincount(g.src, weights=g.count * merch[g.dst], minlength=n)
            + np.bincount(g.dst, weights=g.count * merch[g.src], minlength=n))
    degs = g.degrees()

    rows = []
    d = embeddings.vectors.shape[1] if embeddings is not None else 0
    for nid in ids:
        if nid in g:
            v = g.index_of(nid)
            nbrs = g.neighbor_array(v)
            if previous is not None and nid in previous:
                old = {previous.node_ids[j] for j in previous.neighbor_array(previous.index_of(nid))}
                new = sum(1 for j in nbrs if g.node_ids[j] not in old)
            else:
                new = len(nbrs)
            tab = (in_deg[v], out_deg[v], in_amt[v], out_amt[v], degs[v], m_tx[v], new)
        else:
            v = None
            tab = (0.0,) * len(TABULAR_FEATURES)
        emb: tuple[float, ...] = ()
        if embeddings is not None:
            if v is not None and v in embeddings:
                vec = embeddings[v]
            elif v is None and absent is not None and nid in absent:
                vec = absent[nid]
            else:
                raise KeyError(f"no embedding for node {nid!r}")
            emb = tuple(float(x) for x in vec)
            if len(emb) != d:
                raise ValueError(f"embedding width mismatch at {nid!r}")
        rows.append(FeatureRow(nid, tuple(float(x) for x in tab) + emb, truth[nid].is_mule))
    return rows


def stack_rows(rows: list[FeatureRow]) -> tuple[list[str], np.ndarray, np.ndarray]:
    if not rows:
        raise ValueError("no feature rows")
    width = len(rows[0].features)
    if any(len(r.features) != width for r in rows):
        raise ValueError("feature rows have inconsistent widths")
    X = np.array([r.features for r in rows], dtype=np.float64).reshape(len(rows), width)
    if not np.isfinite(X).all():
        raise ValueError("feature rows contain non-finite values")
    return [r.node_id for r in rows], X, np.array([r.label for r in rows], dtype=np.float64)


@dataclass(frozen=True)
class LogRegConfig:
    learning_rate: float = 0.5
    epochs: int = 1000
    l2: float = 1e-3
    seed: int = 0


@dataclass
class LogisticModel:
    weights: np.ndarray
    bias: float
    mean: np.ndarray
    scale: np.ndarray

    def decision(self, X) -> np.ndarray:
        return ((np.asarray(X, dtype=np.float64) - self.mean) / self.scale) @ self.weights + self.bias

    def predict_proba(self, X) -> np.ndarray:
        return expit(self.decision(X))


def fit_logreg(X, y, lr: float = 0.5, epochs: int = 1000, l2: float = 1e-3,
               seed: int = 0) -> LogisticModel:
    """Full-batch gradient descent on mean log-loss plus ``l2 / 2 * |w|^2``.

    Columns are z-scored with training statistics; constant columns are left
    centred but unscaled. The step is capped at ``1 / L``, ``L`` being the
    gradient's Lipschitz constant, so a large ``l2`` cannot diverge. Weights
    start at zero, so ``seed`` only names the run and the fit is deterministic.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be 2-D with one label per row")
    if not ((y == 0) | (y == 1)).all():
        raise ValueError("labels must be 0 or 1")
    if y.min() == y.max():
        raise ValueError("need at least one positive and one negative example")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Z = (X - mean) / scale
    n = len(y)
    Z1 = np.c_[Z, np.ones(n)]
    lipschitz = 0.25 * np.linalg.norm(Z1, 2) ** 2 / n + l2
    step = min(lr, 1.0 / lipschitz)
    w = np.zeros(X.shape[1])
    b = 0.0
    for _ in range(epochs):
        r = expit(Z @ w + b) - y
        w -= step * (Z.T @ r / n + l2 * w)
        b -= step * float(r.mean())
    return LogisticModel(w, b, mean, scale)


def _ranking(scores, ids) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if ids is None:
        ids = np.arange(len(scores))
    ids = np.asarray(ids)
    if len(ids) != len(scores):
        raise ValueError("ids and scores differ in length")
    # descending score, ties by ascending id
    return np.lexsort((ids, -scores))


def precision_at_k(scores, labels, k: int, ids=None) -> float:
    labels = np.asarray(labels, dtype=bool)
    if len(labels) != len(scores):
        raise ValueError("scores and labels differ in length")
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(labels):
        raise ValueError(f"k={k} exceeds the {len(labels)} ranked rows")
    order = _ranking(scores, ids)
    return float(labels[order[:k]].mean())


def pr_auc(scores, labels, ids=None) -> float:
    """Average precision: mean over positives of precision at their rank."""
    labels = np.asarray(labels, dtype=bool)
    if len(labels) != len(scores):
        raise ValueError("scores and labels differ in length")
    if not labels.any():
        raise ValueError("average precision needs at least one positive")
    ranked = labels[_ranking(scores, ids)]
    hits = np.cumsum(ranked)
    ranks = np.arange(1, len(ranked) + 1)
    return float((hits[ranked] / ranks[ranked]).sum() / ranked.sum())


@dataclass
class EvalResult:
    pr_auc: float
    precision_at: dict[int, float] = field(default_factory=dict)

    def metrics(self) -> dict[str, float]:
        out = {"pr_auc": self.pr_auc}
        out.update({f"p@{k}": v for k, v in self.precision_at.items()})
        return out


def evaluate_scores(scores, labels, ids=None, ks=DEFAULT_KS) -> EvalResult:
    n = len(labels)
    return EvalResult(pr_auc(scores, labels, ids),
                      {k: precision_at_k(scores, labels, min(k, n), ids) for k in ks})


def _relative(base: float, aug: float) -> float:
    if base == 0:
        return 0.0 if aug == 0 else float("inf")
    return (aug - base) / base


@dataclass
class Comparison:
    baseline: EvalResult
    augmented: EvalResult

    @property
    def relative_improvements(self) -> dict[str, float]:
        b, a = self.baseline.metrics(), self.augmented.metrics()
        return {m: _relative(b[m], a[m]) for m in b}


def compare(baseline_train: list[FeatureRow], augmented_train: list[FeatureRow],
            baseline_test: list[FeatureRow], augmented_test: list[FeatureRow],
            cfg: LogRegConfig = LogRegConfig(), ks=DEFAULT_KS) -> Comparison:
    """Fit both models on the training week and score the test week."""
    results = []
    for train_rows, test_rows in ((baseline_train, baseline_test), (augmented_train, augmented_test)):
        results.append(stack_rows(train_rows) + stack_rows(test_rows))
    (bi, bX, by, bti, btX, bty), (ai, aX, ay, ati, atX, aty) = results
    if bi != ai or bti != ati or not (np.array_equal(by, ay) and np.array_equal(bty, aty)):
        raise ValueError("baseline and augmented rows must cover the same nodes and labels")
    out = []
    for X, y, tX in ((bX, by, btX), (aX, ay, atX)):
        model = fit_logreg(X, y, cfg.learning_rate, cfg.epochs, cfg.l2, cfg.seed)
        out.append(evaluate_scores(model.decision(tX), bty, np.array(bti), ks))
    return Comparison(*out)


@dataclass
class MuleBenchResult:
    comparison: Comparison
    n_accounts: int
    n_mules: int
    train_week: int


def _absent(g: HeteroGraph, truth: dict[str, Account], params) -> dict[str, np.ndarray]:
    missing = sorted(nid for nid, a in truth.items() if a.node_type is NodeType.CORE and nid not in g)
    vecs = embed_isolated(params, [(nid, NodeType.CORE) for nid in missing])
    return dict(zip(missing, vecs))


def mule_benchmark(pop_cfg: PopulationConfig, mule_cfg: MuleConfig, model_cfg: ModelConfig,
                   train_cfg: TrainConfig, sampler_cfg: SamplerConfig,
                   logreg_cfg: LogRegConfig = LogRegConfig(), train_week: int = 1,
                   ks=DEFAULT_KS) -> MuleBenchResult:
    """Synthesise weeks ``train_week - 1 .. train_week + 1``, embed, and compare.

    The embedding model is trained on the training week only and applied
    unchanged to the test week.
    """
    if train_week < 1:
        raise ValueError("train_week must be >= 1 so it has a previous week")
    pop = generate_population(pop_cfg)
    truth = pop.truth
    scheme = None
    graphs = []
    for w in range(train_week - 1, train_week + 2):
        rng = derive(pop_cfg.seed, "week", w)
        recs = generate_week(pop, truth, w, pop_cfg, rng)
        recs, truth, scheme = inject_mules(recs, truth, mule_cfg.n_mules, mule_cfg.spokes_per_mule,
                                           derive(pop_cfg.seed, "mules", w), mule_cfg, scheme, w)
        graphs.append(build_graph(recs, week=f"week_{w}"))
    prev, g_train, g_test = graphs
    params = train(g_train, model_cfg, train_cfg, sampler_cfg).params
    emb_train = embed_graph(g_train, params, sampler_cfg)
    emb_test = embed_graph(g_test, params, sampler_cfg)
    rows = [
        build_features(g_train, truth, None, prev),
        build_features(g_train, truth, emb_train, prev, _absent(g_train, truth, params)),
        build_features(g_test, truth, None, g_train),
        build_features(g_test, truth, emb_test, g_train, _absent(g_test, truth, params)),
    ]
    comp = compare(*rows, cfg=logreg_cfg, ks=ks)
    n_mules = sum(r.label for r in rows[0])
    log.info("mule benchmark: %d core accounts, %d mules", len(rows[0]), n_mules)
    return MuleBenchResult(comp, len(rows[0]), n_mules, train_week)


def write_results(path, comp: Comparison) -> None:
    b, a, rel = comp.baseline.metrics(), comp.augmented.metrics(), comp.relative_improvements
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "baseline", "augmented", "relative_improvement"])
        for m in b:
            w.writerow([m, f"{b[m]:.17g}", f"{a[m]:.17g}", f"{rel[m]:.17g}"])
