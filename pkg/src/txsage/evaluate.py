"""Embedding validation: cosine gap, weekly trends, silhouettes and PCA.

The cosine used throughout is ``(u . v) / (|u| |v| + eps)`` with ``eps = 1e-8``,
so a zero vector has similarity exactly 0 with everything.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .graph import HeteroGraph, NodeType
from .model import EmbeddingTable, ModelParams, embed_graph
from .sampler import SamplerConfig, sample_nonedges
from ._rng import derive

__all__ = [
    "COSINE_EPS",
    "POSITIVE_CAP",
    "SimilarityReport",
    "TrendFit",
    "WeeklySeries",
    "Projection",
    "cosine",
    "cosine_rows",
    "similarity_report",
    "fit_trend",
    "weekly_series",
    "separability",
    "project_2d",
    "write_reports",
    "write_trends",
    "write_projection",
]

COSINE_EPS = 1e-8
POSITIVE_CAP = 1_000_000


def cosine(u, v, epsilon: float = COSINE_EPS) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v) + epsilon))


def cosine_rows(A, B, epsilon: float = COSINE_EPS) -> np.ndarray:
    """Row-wise cosine of two equally shaped matrices."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.shape:
        raise ValueError(f"dimension mismatch: {A.shape} vs {B.shape}")
    dots = np.einsum("nd,nd->n", A, B)
    return dots / (np.linalg.norm(A, axis=1) * np.linalg.norm(B, axis=1) + epsilon)


@dataclass(frozen=True)
class SimilarityReport:
    week: str
    mean_pos: float
    mean_neg: float
    gap: float
    n_pos: int
    n_neg: int
    # number of edges available when positives were subsampled, else None
    pos_capped_from: int | None = None


def _rows(table: EmbeddingTable, nodes: np.ndarray, g: HeteroGraph) -> np.ndarray:
    missing = [int(v) for v in np.unique(nodes) if v not in table]
    if missing:
        raise KeyError(f"no embedding for node {g.node_ids[missing[0]]!r}")
    return np.array([table[v] for v in nodes]) if len(nodes) else np.zeros((0, table.vectors.shape[1]))


def similarity_report(g: HeteroGraph, embeddings: EmbeddingTable, n_neg: int | None,
                      rng: np.random.Generator, core_only: bool = True,
                      cap: int = POSITIVE_CAP) -> SimilarityReport:
    """Mean cosine over edges versus over uniformly sampled non-edges.

    With ``core_only`` both endpoints of every pair are Core accounts.
    ``n_neg=None`` draws as many non-edges as there are positive pairs.
    """
    u, v, _ = g.undirected_edges()
    pool = None
    if core_only:
        is_core = g.node_types == NodeType.CORE.code
        keep = is_core[u] & is_core[v]
        u, v = u[keep], v[keep]
        pool = np.flatnonzero(is_core)
    if len(u) == 0:
        raise ValueError(f"week {g.week!r}: no edges to evaluate")
    capped = None
    if len(u) > cap:
        capped = len(u)
        pick = np.sort(rng.choice(len(u), size=cap, replace=False))
        u, v = u[pick], v[pick]
    n_neg = len(u) if n_neg is None else int(n_neg)
    if n_neg < 1:
        raise ValueError("n_neg must be >= 1")
    neg = sample_nonedges(g, n_neg, rng, nodes=pool)

    idx = np.unique(np.r_[u, v, neg.ravel()])
    Z = _rows(embeddings, idx, g)
    pos_sim = cosine_rows(Z[np.searchsorted(idx, u)], Z[np.searchsorted(idx, v)])
    neg_sim = cosine_rows(Z[np.searchsorted(idx, neg[:, 0])], Z[np.searchsorted(idx, neg[:, 1])])
    mp, mn = float(pos_sim.mean()), float(neg_sim.mean())
    return SimilarityReport(g.week, mp, mn, mp - mn, len(u), len(neg), capped)


@dataclass(frozen=True)
class TrendFit:
    """Least-squares line ``y = intercept + slope * x`` with 95% t intervals.

    ``ci95_halfwidth`` is the half-width of the confidence band of the fitted
    mean line at ``x_mean``; :meth:`band` gives it at any ``x``. Both are
    infinite with fewer than three points.
    """

    slope: float
    intercept: float
    ci95_halfwidth: float
    slope_ci95_halfwidth: float
    x_mean: float
    sxx: float
    resid_std: float
    t_crit: float
    n: int

    def band(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.n < 3:
            return np.full(x.shape, np.inf)
        return self.t_crit * self.resid_std * np.sqrt(1.0 / self.n + (x - self.x_mean) ** 2 / self.sxx)

    def predict(self, x) -> np.ndarray:
        return self.intercept + self.slope * np.asarray(x, dtype=np.float64)


def fit_trend(x, y) -> TrendFit:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(x)
    if n < 2 or len(y) != n:
        raise ValueError("need at least two points of matching length")
    xm, ym = x.mean(), y.mean()
    sxx = float(((x - xm) ** 2).sum())
    if sxx == 0:
        raise ValueError("x values are all equal")
    slope = float(((x - xm) * (y - ym)).sum() / sxx)
    intercept = float(ym - slope * xm)
    if n < 3:
        return TrendFit(slope, intercept, np.inf, np.inf, float(xm), sxx, np.nan, np.nan, n)
    resid = y - (intercept + slope * x)
    s = float(np.sqrt((resid ** 2).sum() / (n - 2)))
    t = float(stats.t.ppf(0.975, n - 2))
    return TrendFit(slope, intercept, t * s / np.sqrt(n), t * s / np.sqrt(sxx), float(xm), sxx, s, t, n)


@dataclass
class WeeklySeries:
    reports: list[SimilarityReport]
    pos_fit: TrendFit
    neg_fit: TrendFit
    gap_fit: TrendFit


def weekly_series(params: ModelParams, weeks: list[HeteroGraph], sampler_cfg: SamplerConfig,
                  n_neg: int | None = None, core_only: bool = True) -> WeeklySeries:
    """Infer every week with fixed parameters, report each, fit lines over week index."""
    if len(weeks) < 2:
        raise ValueError(f"weekly series needs at least 2 weeks, got {len(weeks)}")
    reports = []
    for i, g in enumerate(weeks):
        table = embed_graph(g, params, sampler_cfg)
        rng = derive(sampler_cfg.seed, "eval", g.week, i)
        reports.append(similarity_report(g, table, n_neg, rng, core_only=core_only))
    x = np.arange(len(reports))
    return WeeklySeries(
        reports,
        fit_trend(x, [r.mean_pos for r in reports]),
        fit_trend(x, [r.mean_neg for r in reports]),
        fit_trend(x, [r.gap for r in reports]),
    )


def separability(vectors, labels, chunk: int = 2048) -> float:
    """Mean silhouette coefficient with cosine distance ``1 - cos``."""
    X = np.asarray(vectors, dtype=np.float64)
    labels = np.asarray(labels)
    if X.ndim != 2 or len(X) != len(labels):
        raise ValueError("need one label per embedding row")
    cats, y, sizes = np.unique(labels, return_inverse=True, return_counts=True)
    if len(cats) < 2:
        raise ValueError("silhouette needs at least two categories")
    if sizes.min() < 2:
        raise ValueError(f"category {cats[np.argmin(sizes)]!r} has fewer than 2 members")
    Xn = X / (np.linalg.norm(X, axis=1, keepdims=True) + COSINE_EPS)
    onehot = np.zeros((len(X), len(cats)))
    onehot[np.arange(len(X)), y] = 1.0
    s = np.empty(len(X))
    for i in range(0, len(X), chunk):
        D = np.clip(1.0 - Xn[i:i + chunk] @ Xn.T, 0.0, 2.0)
        rows = np.arange(i, min(i + chunk, len(X)))
        D[np.arange(len(rows)), rows] = 0.0
        sums = D @ onehot
        own = y[rows]
        a = sums[np.arange(len(rows)), own] / (sizes[own] - 1)
        means = sums / sizes
        means[np.arange(len(rows)), own] = np.inf
        b = means.min(axis=1)
        denom = np.maximum(a, b)
        s[rows] = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(s.mean())


@dataclass
class Projection:
    coords: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray
    mean: np.ndarray


def project_2d(vectors, rel_tol: float = 1e-12) -> Projection:
    """Top two principal components from the covariance eigendecomposition.

    Each component is signed so its largest-magnitude loading is positive.
    Components with negligible variance are returned as zeros.
    """
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2 or len(X) < 3:
        raise ValueError("projection needs at least 3 points")
    mu = X.mean(axis=0)
    Xc = X - mu
    cov = Xc.T @ Xc / (len(X) - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:2]
    vals, vecs = vals[order], vecs[:, order]
    if vecs.shape[1] < 2:
        vals = np.r_[vals, 0.0]
        vecs = np.c_[vecs, np.zeros(len(mu))]
    top = max(float(vals[0]), 0.0)
    for j in range(2):
        if vals[j] <= rel_tol * top or top == 0.0:
            vecs[:, j] = 0.0
            vals[j] = 0.0
            continue
        k = int(np.argmax(np.abs(vecs[:, j])))
        if vecs[k, j] < 0:
            vecs[:, j] = -vecs[:, j]
    return Projection(Xc @ vecs, vecs.T.copy(), vals, mu)


def write_reports(path, reports: list[SimilarityReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["week", "mean_pos", "mean_neg", "gap", "n_pos", "n_neg"])
        for r in reports:
            w.writerow([r.week, f"{r.mean_pos:.17g}", f"{r.mean_neg:.17g}", f"{r.gap:.17g}",
                        r.n_pos, r.n_neg])


def write_trends(path, series: WeeklySeries) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series", "slope", "intercept", "ci95_halfwidth", "slope_ci95_halfwidth"])
        for name, fit in (("mean_pos", series.pos_fit), ("mean_neg", series.neg_fit),
                          ("gap", series.gap_fit)):
            w.writerow([name, f"{fit.slope:.17g}", f"{fit.intercept:.17g}",
                        f"{fit.ci95_halfwidth:.17g}", f"{fit.slope_ci95_halfwidth:.17g}"])


def write_projection(path, node_ids, node_types, coords, labels) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "node_type", "x", "y", "label"])
        for nid, t, (x, y), lab in zip(node_ids, node_types, coords, labels):
            w.writerow([nid, NodeType(t).value, f"{x:.9g}", f"{y:.9g}", lab])
