"""Staged reverse-engineering attack with Jacobian-based query augmentation.

The attacker starts from a few labelled domain samples, then repeatedly
steps every known point by ``lam * sign(grad max_c P_sub[c | x])``, asks
the victim (the oracle) to label the new points, and retrains its
substitute on the union. FGSM examples crafted on the final substitute
measure how well the attack transfers to the victim.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataio import Dataset, child_seed
from .netcore import FeedforwardNet, TrainConfig, init_net, input_gradient, net_from_dict, net_to_dict, predict, train


class Oracle:
    """Black-box labelling access to a victim net, counting every query."""

    def __init__(self, net: FeedforwardNet):
        self._net = net
        self.n_queries = 0

    def query(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        labels = predict(self._net, X)
        self.n_queries += len(X)
        return np.asarray(labels, dtype=int)


@dataclass
class REConfig:
    lam: float = 0.1
    n_stages: int = 4
    s0_per_class: int = 10
    hidden: tuple[int, ...] = (16, 8)
    activation: str = "relu"
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        if self.n_stages < 0:
            raise ValueError("stage count must be >= 0")
        if self.s0_per_class < 1:
            raise ValueError("S0 needs at least one sample per class")


@dataclass
class REStage:
    k: int
    X: np.ndarray            # S_k features
    y: np.ndarray            # oracle labels for S_k
    substitute: FeedforwardNet
    new_queries: np.ndarray  # points first queried to build S_k

    @property
    def n_new_queries(self) -> int:
        return len(self.new_queries)


def jacobian_augment(substitute: FeedforwardNet, S, lam: float) -> np.ndarray:
    """One augmentation step for every row of ``S``, clamped to [0, 1]."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if len(S) == 0:
        return S.copy()
    c_star = predict(substitute, S)
    g = input_gradient(substitute, S, c_star, objective="posterior")
    return np.clip(S + lam * np.sign(g), 0.0, 1.0)


def _draw_s0(data: Dataset, per_class: int, rng) -> np.ndarray:
    picks = []
    for c in range(data.n_classes):
        idx = np.flatnonzero(data.y == c)
        if len(idx) < per_class:
            raise ValueError(f"class {c} has {len(idx)} seed samples, {per_class} required")
        picks.append(np.sort(rng.choice(idx, size=per_class, replace=False)))
    return data.X[np.concatenate(picks)]


def _fit_substitute(X, y, n_classes, cfg: REConfig, k: int) -> FeedforwardNet:
    dims = [X.shape[1], *cfg.hidden, n_classes]
    net = init_net(dims, cfg.activation, cfg.train.init_scale, child_seed(cfg.seed, "substitute-init"))
    tcfg = TrainConfig(cfg.train.epochs, cfg.train.learning_rate, cfg.train.batch_size,
                       child_seed(cfg.seed, "substitute-train"), cfg.train.init_scale)
    return train(net, Dataset(X, y, n_classes, "query"), tcfg)


def run_re_attack(oracle: Oracle, domain_seed_data: Dataset, cfg: REConfig) -> list[REStage]:
    """Run ``cfg.n_stages`` augmentation rounds; returns stages 0..n_stages.

    Stage 0's ``new_queries`` is S0 itself. The substitute is retrained from
    a fresh seeded initialisation at every stage.
    """
    rng = np.random.default_rng(child_seed(cfg.seed, "s0"))
    X = _draw_s0(domain_seed_data, cfg.s0_per_class, rng)
    y = oracle.query(X)
    K = domain_seed_data.n_classes
    stages = [REStage(0, X, y, _fit_substitute(X, y, K, cfg, 0), X.copy())]
    for k in range(1, cfg.n_stages + 1):
        prev = stages[-1]
        new = jacobian_augment(prev.substitute, prev.X, cfg.lam)
        labels = oracle.query(new)
        X = np.concatenate([prev.X, new])
        y = np.concatenate([prev.y, labels])
        stages.append(REStage(k, X, y, _fit_substitute(X, y, K, cfg, k), new))
    return stages


def fgsm_craft(substitute: FeedforwardNet, x, true_label, eps: float) -> np.ndarray:
    """One-step FGSM on the substitute's cross-entropy, clamped to [0, 1]."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    x = np.asarray(x, dtype=float)
    g = input_gradient(substitute, x, true_label, objective="loss")
    return np.clip(x + eps * np.sign(g), 0.0, 1.0)


def evaluate_attack(oracle_net: FeedforwardNet, stages, eval_set: Dataset, eps: float):
    """Per-stage (substitute agreement, FGSM transfer success) on ``eval_set``."""
    if len(eval_set) == 0:
        raise ValueError("empty evaluation set")
    oracle_pred = predict(oracle_net, eval_set.X)
    correct = oracle_pred == eval_set.y
    rows = []
    for st in stages:
        agreement = float(np.mean(predict(st.substitute, eval_set.X) == oracle_pred))
        if correct.any():
            adv = fgsm_craft(st.substitute, eval_set.X[correct], eval_set.y[correct], eps)
            transfer = float(np.mean(predict(oracle_net, adv) != oracle_pred[correct]))
        else:
            transfer = 0.0
        rows.append((agreement, transfer))
    return rows


def stages_to_dict(stages) -> dict:
    return {"stages": [
        {"k": st.k, "X": st.X.tolist(), "y": st.y.tolist(), "new_queries": st.new_queries.tolist(),
         "substitute": net_to_dict(st.substitute)}
        for st in stages
    ]}


def stages_from_dict(d: dict) -> list[REStage]:
    try:
        return [REStage(int(s["k"]), np.array(s["X"], dtype=float).reshape(len(s["X"]), -1),
                        np.array(s["y"], dtype=int), net_from_dict(s["substitute"]),
                        np.array(s["new_queries"], dtype=float).reshape(len(s["new_queries"]), -1))
                for s in d["stages"]]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed stage transcript: {exc}") from exc
