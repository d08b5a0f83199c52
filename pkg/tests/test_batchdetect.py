import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adare.adastat import AdaConfig, estimate_confusion_matrix, lawa_maxkl
from adare.batchdetect import (
    BatchScoreConfig, aggregate, aggregate_max, aggregate_mean, aggregate_minibatch_union, aggregate_rows,
    roc, roc_auc, sample_batches, score_batch_pool, score_sampled_batches,
)
from adare.dataio import Dataset
from adare.netcore import init_net
from adare.nullmodel import EmConfig, fit_null_models
from oracles import brute_auc


def test_mean_and_max_examples():
    assert aggregate_mean([3]) == 3
    assert aggregate_mean([1, 2, 3, 4]) == 2.5
    assert aggregate_max([3]) == 3
    assert aggregate_max([1, 4, 2]) == 4
    for f in (aggregate_mean, aggregate_max):
        with pytest.raises(ValueError):
            f([])


def test_union_examples():
    assert aggregate_minibatch_union([1, 2, 3, 4], 2, "mean") == 3.5
    assert aggregate_minibatch_union([1, 2, 3, 4, 10], 2, "mean") == 10
    stats = [0.3, 0.9, 0.1, 0.5]
    assert aggregate_minibatch_union(stats, 4, "mean") == aggregate_mean(stats)
    assert aggregate_minibatch_union(stats, 4, "max") == aggregate_max(stats)
    assert aggregate_minibatch_union(stats, 1, "mean") == aggregate_max(stats)
    with pytest.raises(ValueError):
        aggregate_minibatch_union([], 2)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30), st.integers(0, 2**31 - 1))
def test_aggregator_properties(stats, seed):
    perm = np.random.default_rng(seed).permutation(stats)
    assert aggregate_mean(perm) == pytest.approx(aggregate_mean(stats), rel=1e-12, abs=1e-6)
    assert aggregate_max(stats) >= aggregate_mean(stats) - 1e-9 * max(1.0, abs(aggregate_mean(stats)))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), bs=st.integers(1, 23), mb=st.integers(1, 6),
       scheme=st.sampled_from(["mean", "max", "union"]), inner=st.sampled_from(["mean", "max"]))
def test_vectorised_aggregation_matches_loop(seed, bs, mb, scheme, inner):
    mb = min(mb, bs)
    cfg = BatchScoreConfig(batch_size=bs, scheme=scheme, mb_size=mb, inner=inner)
    S = np.random.default_rng(seed).normal(size=(7, bs))
    np.testing.assert_allclose(aggregate_rows(S, cfg), [aggregate(row, cfg) for row in S], rtol=1e-12)


def test_sample_batches():
    pool = np.arange(3)
    assert sample_batches(pool, 5, 0, seed=1) == []
    batches = sample_batches(pool, 5, 4, seed=1)
    assert len(batches) == 4 and all(len(b) == 5 for b in batches)
    assert all(set(b) <= {0, 1, 2} for b in batches)
    again = sample_batches(pool, 5, 4, seed=1)
    assert all(np.array_equal(a, b) for a, b in zip(batches, again))
    with pytest.raises(ValueError):
        sample_batches([], 2, 3, seed=0)


def test_auc_examples():
    assert roc_auc([5, 6, 7], [1, 2]) == 1.0
    assert roc_auc([1, 2, 2], [2, 1, 2]) == 0.5
    assert roc_auc([0.9, 0.4], [0.5, 0.1]) == 0.75
    r = roc([0.9, 0.4], [0.5, 0.1])
    assert (r.n_pos, r.n_neg, r.auc) == (2, 2, 0.75)
    with pytest.raises(ValueError):
        roc_auc([], [1.0])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=1, max_size=20), st.lists(st.integers(0, 6), min_size=1, max_size=20))
def test_auc_matches_pair_counting(pos, neg):
    assert roc_auc(pos, neg) == brute_auc(pos, neg)
    assert roc_auc(neg, pos) == pytest.approx(1.0 - brute_auc(pos, neg), abs=1e-15)


def test_auc_invariant_under_monotone_map():
    rng = np.random.default_rng(3)
    pos, neg = rng.normal(1, 1, 40), rng.normal(0, 1, 50)
    assert roc_auc(np.exp(pos), np.exp(neg)) == roc_auc(pos, neg)


def test_batch_config_validation():
    with pytest.raises(ValueError):
        BatchScoreConfig(batch_size=4, mb_size=5, scheme="union")
    with pytest.raises(ValueError):
        BatchScoreConfig(scheme="vote")


@pytest.fixture(scope="module")
def detector():
    rng = np.random.default_rng(0)
    X = np.concatenate([np.clip(rng.normal(0.3 + 0.2 * c, 0.05, (30, 4)), 0, 1) for c in range(3)])
    data = Dataset(X, np.repeat(np.arange(3), 30), 3)
    net = init_net([4, 4, 3], "relu", init_scale=2.0, seed=3)
    nulls = fit_null_models(net, data, [1], "pairwise", cfg=EmConfig(components=(1, 2), restarts=1, seed=1))
    return net, nulls, estimate_confusion_matrix(net, data), AdaConfig(layers=(1,)), X


def test_score_pool_contracts(detector):
    net, nulls, conf, ada, X = detector
    per_image = lawa_maxkl(net, nulls, conf, X[:6], ada)
    for scheme in ("mean", "max", "union"):
        singles = score_batch_pool(net, nulls, conf, ada, [x[None] for x in X[:6]],
                                   BatchScoreConfig(batch_size=1, scheme=scheme, mb_size=1))
        np.testing.assert_allclose(singles, per_image, rtol=1e-12)
    batches = [X[:10], X[10:20], X[:10]]
    union = score_batch_pool(net, nulls, conf, ada, batches, BatchScoreConfig(10, "union", 5))
    mean = score_batch_pool(net, nulls, conf, ada, batches, BatchScoreConfig(10, "mean", 5))
    assert union[0] == union[2] and mean[0] == mean[2]
    assert all(u >= m - 1e-12 for u, m in zip(union, mean))


def test_sampled_scores_match_direct_pool(detector):
    net, nulls, conf, ada, X = detector
    stats = lawa_maxkl(net, nulls, conf, X, ada)
    cfg = BatchScoreConfig(batch_size=6, scheme="union", mb_size=3, n_batches=5)
    fast = score_sampled_batches(stats, cfg, np.random.default_rng(9))
    idx = np.random.default_rng(9).integers(0, len(X), size=(5, 6))
    slow = score_batch_pool(net, nulls, conf, ada, [X[row] for row in idx], cfg)
    np.testing.assert_allclose(fast, slow, rtol=1e-12)
