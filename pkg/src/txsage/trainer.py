"""Unsupervised negative-sampling loss, backprop and plain SGD.

For a positive pair ``(u, v)`` and negatives ``n_1..n_Q`` drawn for ``u``::

    loss = -log s(z_u . z_v) - Q * mean_i log s(-z_u . z_ni)

with ``s`` the logistic function and log arguments clamped at 1e-15. Note that
``Q`` multiplies the negative term, so at fixed embeddings raising ``Q`` can
only raise the loss; loss values are not comparable across ``Q``.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .graph import HeteroGraph
from .model import (ComputeTree, ModelConfig, ModelParams, backward_tree, input_matrix,
                    forward_tree, init_params, sample_tree)
from .sampler import SamplerConfig, sample_negatives_many, sample_positive_edges
from ._rng import derive

log = logging.getLogger(__name__)

LOG_FLOOR = 1e-15
_LOG_FLOOR = math.log(LOG_FLOOR)

__all__ = [
    "TrainConfig",
    "LossBreakdown",
    "TrainingBatch",
    "TrainResult",
    "NonFiniteGradient",
    "pair_loss",
    "prepare_batch",
    "batch_loss",
    "loss_and_gradients",
    "batch_gradients",
    "sgd_step",
    "train",
    "write_training_log",
]


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    negatives: int = 2
    epochs: int = 10
    batch_size: int = 256
    pairs_per_node: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.negatives < 1 or self.epochs < 0 \
                or self.batch_size < 1 or self.pairs_per_node < 1:
            raise ValueError(f"invalid training config: {self}")


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    positive_term: float
    negative_term_mean: float
    q: int


def _log_sigmoid(x):
    """Clamped log of the logistic function and its derivative in ``x``."""
    ls = -np.logaddexp(0.0, -x)
    clamped = ls < _LOG_FLOOR
    grad = np.where(clamped, 0.0, 1.0 - np.exp(ls))
    return np.maximum(ls, _LOG_FLOOR), grad


def pair_loss(z_u, z_v, z_negs) -> LossBreakdown:
    z_u = np.asarray(z_u, dtype=np.float64)
    z_v = np.asarray(z_v, dtype=np.float64)
    z_negs = np.atleast_2d(np.asarray(z_negs, dtype=np.float64))
    if z_negs.shape[0] < 1 or z_negs.size == 0:
        raise ValueError("need at least one negative")
    if z_u.shape != z_v.shape or z_negs.shape[1:] != z_u.shape:
        raise ValueError(f"dimension mismatch: {z_u.shape}, {z_v.shape}, {z_negs.shape}")
    q = z_negs.shape[0]
    pos = float(-_log_sigmoid(np.array([z_u @ z_v]))[0][0])
    neg = float(np.mean(-_log_sigmoid(-(z_negs @ z_u))[0]))
    return LossBreakdown(pos + q * neg, pos, neg, q)


@dataclass
class TrainingBatch:
    pairs: np.ndarray
    negatives: np.ndarray
    tree: ComputeTree


def prepare_batch(g: HeteroGraph, pairs, sampler_cfg: SamplerConfig, train_cfg: TrainConfig,
                  rng: np.random.Generator) -> TrainingBatch:
    """Draw negatives for each anchor and the computation tree for all endpoints."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        raise ValueError("empty batch")
    negs = sample_negatives_many(g, pairs[:, 0], train_cfg.negatives, rng)
    tree = sample_tree(g, np.r_[pairs.ravel(), negs.ravel()], sampler_cfg, rng)
    return TrainingBatch(pairs, negs, tree)


def _loss_terms(params, batch: TrainingBatch, X, need_grad: bool):
    z, cache = forward_tree(batch.tree, params, X)
    iu = batch.tree.seed_rows(batch.pairs[:, 0])
    iv = batch.tree.seed_rows(batch.pairs[:, 1])
    ineg = batch.tree.seed_rows(batch.negatives)
    zu, zv, zn = z[iu], z[iv], z[ineg]
    B, Q = batch.negatives.shape
    s_pos = np.einsum("bd,bd->b", zu, zv)
    s_neg = np.einsum("bd,bqd->bq", zu, zn)
    lp, gp = _log_sigmoid(s_pos)
    ln, gn = _log_sigmoid(-s_neg)
    pos = float(np.mean(-lp))
    neg = float(np.mean(-ln))
    loss = LossBreakdown(pos + Q * neg, pos, neg, Q)
    if not need_grad:
        return loss, None
    # dL/ds for the batch mean; Q * mean_q collapses to a plain sum over q
    d_pos = -gp / B
    d_neg = gn / B
    dz = np.zeros_like(z)
    np.add.at(dz, iu, d_pos[:, None] * zv + np.einsum("bq,bqd->bd", d_neg, zn))
    np.add.at(dz, iv, d_pos[:, None] * zu)
    np.add.at(dz, ineg.ravel(), (d_neg[:, :, None] * zu[:, None, :]).reshape(-1, z.shape[1]))
    return loss, backward_tree(batch.tree, params, cache, dz)


def batch_loss(params: ModelParams, batch: TrainingBatch, X: np.ndarray) -> LossBreakdown:
    return _loss_terms(params, batch, X, need_grad=False)[0]


def loss_and_gradients(params: ModelParams, batch: TrainingBatch,
                       X: np.ndarray) -> tuple[LossBreakdown, ModelParams]:
    return _loss_terms(params, batch, X, need_grad=True)


def batch_gradients(g: HeteroGraph, params: ModelParams, pairs, sampler_cfg: SamplerConfig,
                    train_cfg: TrainConfig, rng: np.random.Generator,
                    inputs: np.ndarray | None = None) -> tuple[ModelParams, LossBreakdown]:
    """Exact gradient of the mean pair loss, holding the sampled trees fixed."""
    X = input_matrix(g, params.config.input_dim) if inputs is None else inputs
    batch = prepare_batch(g, pairs, sampler_cfg, train_cfg, rng)
    loss, grads = loss_and_gradients(params, batch, X)
    return grads, loss


def sgd_step(params: ModelParams, grads: ModelParams, learning_rate: float) -> ModelParams:
    for name, gr in zip(ModelParams.NAMES, grads.arrays()):
        if not np.isfinite(gr).all():
            bad = int(np.count_nonzero(~np.isfinite(gr)))
            raise NonFiniteGradient(f"gradient of {name} has {bad} non-finite entries")
    return params.map(lambda p, gr: p - learning_rate * gr, grads)


@dataclass
class TrainResult:
    params: ModelParams
    epochs: list[LossBreakdown] = field(default_factory=list)
    batches: list[tuple[int, int, LossBreakdown]] = field(default_factory=list)


def _orient(pairs: np.ndarray, rng) -> np.ndarray:
    flip = rng.random(len(pairs)) < 0.5
    out = pairs.copy()
    out[flip] = pairs[flip][:, ::-1]
    return out


def _extra_pairs(g: HeteroGraph, pairs: np.ndarray, per_node: int, rng) -> np.ndarray:
    if per_node <= 1:
        return pairs
    anchors = np.repeat(pairs[:, 0], per_node - 1)
    deg = g.indptr[anchors + 1] - g.indptr[anchors]
    pick = g.indices[g.indptr[anchors] + (rng.random(len(anchors)) * deg).astype(np.int64)]
    return np.vstack([pairs, np.stack([anchors, pick], axis=1)])


def train(g: HeteroGraph, model_cfg: ModelConfig, train_cfg: TrainConfig,
          sampler_cfg: SamplerConfig, params: ModelParams | None = None) -> TrainResult:
    """Mini-batch SGD for ``epochs * ceil(edges / batch_size)`` steps.

    Batch ``b`` of epoch ``e`` draws everything from stream ``(seed, e, b)``,
    so a run is a pure function of the configs.
    """
    if g.edge_count == 0:
        raise ValueError("cannot train on a graph without edges")
    X = input_matrix(g, model_cfg.input_dim)
    params = init_params(model_cfg, train_cfg.seed) if params is None else params.copy()
    n_batches = -(-g.edge_count // train_cfg.batch_size)
    result = TrainResult(params)
    for epoch in range(train_cfg.epochs):
        tot = pos = neg = 0.0
        for b in range(n_batches):
            rng = derive(train_cfg.seed, "train", epoch, b)
            pairs = sample_positive_edges(g, train_cfg.batch_size, rng, weighted=sampler_cfg.weighted)
            pairs = _extra_pairs(g, _orient(pairs, rng), train_cfg.pairs_per_node, rng)
            batch = prepare_batch(g, pairs, sampler_cfg, train_cfg, rng)
            loss, grads = loss_and_gradients(params, batch, X)
            params = sgd_step(params, grads, train_cfg.learning_rate)
            result.batches.append((epoch, b, loss))
            tot += loss.total
            pos += loss.positive_term
            neg += loss.negative_term_mean
        ep = LossBreakdown(tot / n_batches, pos / n_batches, neg / n_batches, train_cfg.negatives)
        result.epochs.append(ep)
        log.info("epoch %d loss %.6f (pos %.6f, neg %.6f)", epoch, ep.total, ep.positive_term,
                 ep.negative_term_mean)
    result.params = params
    return result


def write_training_log(path, result: TrainResult) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "batch", "total_loss", "positive_term", "negative_term_mean"])
        for epoch, b, loss in result.batches:
            w.writerow([epoch, b, f"{loss.total:.17g}", f"{loss.positive_term:.17g}",
                        f"{loss.negative_term_mean:.17g}"])
