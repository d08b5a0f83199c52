"""Batch-level aggregation of per-image statistics and ROC-AUC evaluation.

A mini-batch union detection ("alarm if any mini-batch exceeds t") is scored
as the maximum over mini-batch aggregates, which makes it threshold-free
and ROC-equivalent to the union rule at a common threshold.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .adastat import AdaConfig, lawa_maxkl

SCHEMES = ("mean", "max", "union")


@dataclass
class BatchScoreConfig:
    batch_size: int = 20
    scheme: str = "union"
    mb_size: int = 5
    inner: str = "mean"
    n_batches: int = 400
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.mb_size < 1:
            raise ValueError("batch and mini-batch sizes must be >= 1")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.inner not in ("mean", "max"):
            raise ValueError(f"unknown inner aggregator {self.inner!r}")
        if self.scheme == "union" and self.mb_size > self.batch_size:
            raise ValueError("mini-batch size exceeds batch size")


@dataclass
class RocResult:
    auc: float
    positive: np.ndarray
    negative: np.ndarray

    @property
    def n_pos(self) -> int:
        return len(self.positive)

    @property
    def n_neg(self) -> int:
        return len(self.negative)


def _nonempty(stats):
    a = np.asarray(stats, dtype=float)
    if a.size == 0:
        raise ValueError("cannot aggregate an empty statistic list")
    return a


def aggregate_mean(stats) -> float:
    return float(np.mean(_nonempty(stats)))


def aggregate_max(stats) -> float:
    return float(np.max(_nonempty(stats)))


def aggregate_minibatch_union(stats, mb_size: int, inner: str = "mean") -> float:
    """Max over consecutive mini-batches of the inner aggregate; a short
    final mini-batch is kept."""
    a = _nonempty(stats)
    if mb_size < 1:
        raise ValueError("mini-batch size must be >= 1")
    agg = aggregate_mean if inner == "mean" else aggregate_max
    return max(agg(a[i:i + mb_size]) for i in range(0, len(a), mb_size))


def aggregate(stats, cfg: BatchScoreConfig) -> float:
    if cfg.scheme == "mean":
        return aggregate_mean(stats)
    if cfg.scheme == "max":
        return aggregate_max(stats)
    return aggregate_minibatch_union(stats, cfg.mb_size, cfg.inner)


def aggregate_rows(S: np.ndarray, cfg: BatchScoreConfig) -> np.ndarray:
    """Vectorised :func:`aggregate` over the rows of a (n_batches, batch) array."""
    S = np.asarray(S, dtype=float)
    if S.shape[1] == 0:
        raise ValueError("cannot aggregate an empty statistic list")
    if cfg.scheme == "mean":
        return S.mean(1)
    if cfg.scheme == "max":
        return S.max(1)
    inner = np.mean if cfg.inner == "mean" else np.max
    parts = [inner(S[:, i:i + cfg.mb_size], axis=1) for i in range(0, S.shape[1], cfg.mb_size)]
    return np.max(np.stack(parts, axis=1), axis=1)


def sample_batch_indices(pool_size: int, batch_size: int, n_batches: int, rng) -> np.ndarray:
    if pool_size < 1:
        raise ValueError("cannot sample from an empty pool")
    return rng.integers(0, pool_size, size=(n_batches, batch_size))


def sample_batches(pool, batch_size: int, n_batches: int, seed: int) -> list:
    """``n_batches`` batches drawn uniformly with replacement from ``pool``."""
    pool = np.asarray(pool)
    idx = sample_batch_indices(len(pool), batch_size, n_batches, np.random.default_rng(seed))
    return [pool[row] for row in idx]


def roc_auc(positive, negative) -> float:
    """Mann-Whitney AUC: P(pos > neg) with ties counted one half."""
    pos = np.asarray(positive, dtype=float).ravel()
    neg = np.asarray(negative, dtype=float).ravel()
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("both score lists must be nonempty")
    ranks = rankdata(np.concatenate([pos, neg]))
    u = ranks[:len(pos)].sum() - len(pos) * (len(pos) + 1) / 2.0
    return float(u / (len(pos) * len(neg)))


def roc(positive, negative) -> RocResult:
    return RocResult(roc_auc(positive, negative), np.asarray(positive, float), np.asarray(negative, float))


def score_batch_pool(net, nulls, confusion, ada: AdaConfig, batches, cfg: BatchScoreConfig) -> list[float]:
    """Aggregate per-image L-AWA-ADA-maxKL statistics for each batch."""
    return [aggregate(lawa_maxkl(net, nulls, confusion, np.atleast_2d(b), ada), cfg) for b in batches]


def score_sampled_batches(image_stats, cfg: BatchScoreConfig, rng) -> np.ndarray:
    """Draw ``cfg.n_batches`` batches from precomputed per-image statistics and score them.

    Equivalent to :func:`score_batch_pool` on the sampled images, without
    recomputing statistics of images drawn more than once.
    """
    image_stats = np.asarray(image_stats, dtype=float)
    idx = sample_batch_indices(len(image_stats), cfg.batch_size, cfg.n_batches, rng)
    return aggregate_rows(image_stats[idx], cfg)
