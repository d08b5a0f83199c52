"""ADA anomaly statistics: basic ADA, AW-ADA and L-AWA-ADA-maxKL.

All density arithmetic stays in the log domain. Two-point PMFs are built
by log-sum-exp normalisation and floored at ``PMF_FLOOR`` so the KL terms
stay finite when one density underflows.

The ``*_from_densities`` functions take precomputed log densities and
posteriors and are vectorised over leading axes; the net-level wrappers
run the forward pass and look up the null models.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .netcore import FeedforwardNet, forward_batch, predict

PMF_FLOOR = 1e-12
VARIANTS = ("basic", "aw", "lawa-maxkl")


@dataclass
class ConfusionMatrix:
    """``matrix[d, s]`` estimates P[predicted = d | true = s]; columns sum to 1."""
    matrix: np.ndarray
    alpha: float = 1.0

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        k = self.matrix.shape[0]
        if self.matrix.shape != (k, k):
            raise ValueError("confusion matrix must be square")
        if np.any(self.matrix < 0) or np.any(np.abs(self.matrix.sum(0) - 1.0) > 1e-9):
            raise ValueError("confusion matrix columns must be probability vectors")

    @property
    def n_classes(self) -> int:
        return self.matrix.shape[0]


@dataclass
class AdaConfig:
    layers: tuple[int, ...] = (1, 2)
    variant: str = "lawa-maxkl"
    confusion_floor: float = 1e-4
    pmf_floor: float = PMF_FLOOR

    def __post_init__(self):
        self.layers = tuple(int(l) for l in self.layers)
        if not self.layers:
            raise ValueError("AdaConfig needs at least one layer")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown statistic variant {self.variant!r}")
        if self.confusion_floor <= 0:
            raise ValueError("confusion floor must be positive")


def two_point_pmf(log_a, log_b, floor: float = PMF_FLOOR) -> np.ndarray:
    """Normalise the (unnormalised, log) pair (a, b) into a floored two-point PMF.

    Output has a trailing axis of length 2 holding (a, b) entries.
    """
    log_a, log_b = np.broadcast_arrays(np.asarray(log_a, float), np.asarray(log_b, float))
    lse = np.logaddexp(log_a, log_b)
    p = np.stack([np.exp(log_a - lse), np.exp(log_b - lse)], axis=-1)
    p = np.maximum(p, floor)
    return p / p.sum(-1, keepdims=True)


def kl_two_point(p, q) -> np.ndarray | float:
    """KL divergence (nats) between two-point PMFs along the last axis."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape[-1] != 2 or q.shape[-1] != 2:
        raise ValueError("two-point PMFs must have a trailing axis of length 2")
    if np.any(np.abs(p.sum(-1) - 1.0) > 1e-6) or np.any(np.abs(q.sum(-1) - 1.0) > 1e-6):
        raise ValueError("PMFs must be normalised")
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("PMFs must be nonnegative")
    q = np.maximum(q, PMF_FLOOR)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p / q), 0.0)
    out = terms.sum(-1)
    return float(out) if out.ndim == 0 else out


def estimate_confusion_matrix(net: FeedforwardNet, heldout, alpha: float = 1.0) -> ConfusionMatrix:
    """Additively smoothed confusion matrix of ``net`` on held-out data."""
    if alpha <= 0:
        raise ValueError("smoothing constant must be positive")
    k = net.n_classes
    counts = np.bincount(heldout.y, minlength=k)
    missing = np.flatnonzero(counts == 0)
    if len(missing):
        raise ValueError(f"class {int(missing[0])} absent from held-out data")
    pred = predict(net, heldout.X)
    m = np.zeros((k, k))
    np.add.at(m, (pred, heldout.y), 1.0)
    return ConfusionMatrix((m + alpha) / (counts + k * alpha), alpha)


def beta_weights(net: FeedforwardNet, layer: int) -> np.ndarray:
    """Outgoing absolute weight mass of each feature in hidden ``layer``,
    normalised by the largest such mass."""
    if not 1 <= layer <= net.n_hidden:
        raise ValueError(f"layer {layer} has no successor layer (hidden layers are 1..{net.n_hidden})")
    s = np.abs(net.layers[layer].weights).sum(axis=1)
    top = s.max()
    if top == 0:
        return np.ones_like(s)
    return s / top


# -- vectorised cores --------------------------------------------------------

def _log_posterior(posterior):
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(posterior, dtype=float))


def _take(a, idx):
    # a (n, ..., K), idx (n,) -> (n, ...)
    idx = idx.reshape(idx.shape + (1,) * (a.ndim - 1))
    return np.take_along_axis(a, idx, axis=-1)[..., 0]


def _prepare(logf, posterior):
    logf = np.asarray(logf, dtype=float)
    logpost = _log_posterior(posterior)
    single = logpost.ndim == 1
    if single:
        logf, logpost = logf[None], logpost[None]
    if logf.shape[-1] != logpost.shape[-1]:
        raise ValueError("density and posterior class counts differ")
    if logpost.shape[-1] < 2:
        raise ValueError("need at least two classes")
    # expand logf to (n, P, K)
    if logf.ndim == 2:
        logf = logf[:, None, :]
    cd = np.argmax(logpost, axis=-1)
    return logf, logpost, cd, single


def source_posterior_from_densities(logf, c_d) -> np.ndarray:
    """P[C_s = c] over c != c_d from class log densities (last axis); entry c_d is 0."""
    logf = np.asarray(logf, dtype=float)
    k = logf.shape[-1]
    if k < 2:
        raise ValueError("need at least two classes")
    c_d = np.asarray(c_d)
    mask = np.arange(k) == c_d[..., None] if c_d.ndim else np.arange(k) == c_d
    if c_d.ndim and logf.ndim > c_d.ndim + 1:
        mask = mask.reshape(mask.shape[:1] + (1,) * (logf.ndim - 2) + mask.shape[-1:])
    masked = np.where(mask, -np.inf, logf)
    return np.exp(masked - logsumexp(masked, axis=-1, keepdims=True))


def _kl_all_classes(logf, logpost, cd, floor):
    """KL(P^(c) || Q^(c)) for every class c; shape (n, P, K), c_d entries 0."""
    lf_d = _take(logf, cd)[..., None]                       # (n, P, 1)
    lp_d = _take(logpost, cd)[:, None]                      # (n, 1)
    P = two_point_pmf(np.broadcast_to(lf_d, logf.shape), logf, floor)   # (n, P, K, 2)
    Q = two_point_pmf(np.broadcast_to(lp_d, logpost.shape), logpost, floor)[:, None]  # (n, 1, K, 2)
    kl = kl_two_point(P, np.broadcast_to(Q, P.shape))
    own = np.arange(logf.shape[-1]) == cd[:, None]
    return np.where(own[:, None, :], 0.0, kl)


def basic_ada_from_densities(logf, posterior, floor: float = PMF_FLOOR):
    """Basic ADA from class log densities ``logf`` and the DNN posterior.

    ``logf`` is (K,) or (n, K) [or (n, P, K)]; ``posterior`` is (K,) or (n, K).
    """
    logf, logpost, cd, single = _prepare(logf, posterior)
    k = logf.shape[-1]
    own = (np.arange(k) == cd[:, None])[:, None, :]
    cs = np.argmax(np.where(own, -np.inf, logf), axis=-1)          # (n, P)
    kl = _kl_all_classes(logf, logpost, cd, floor)
    out = np.take_along_axis(kl, cs[..., None], axis=-1)[..., 0]
    out = out[:, 0] if out.shape[1] == 1 else out
    return float(out[0]) if single else out


def aw_ada_terms(logf, posterior, confusion, confusion_floor: float = 1e-4, floor: float = PMF_FLOOR):
    """Source-posterior weighted, inverse-confusion weighted KL sum.

    Returns shape (n, P) for ``logf`` of shape (n, P, K).
    """
    logf, logpost, cd, single = _prepare(logf, posterior)
    cm = confusion.matrix if isinstance(confusion, ConfusionMatrix) else np.asarray(confusion, float)
    inv_w = 1.0 / np.maximum(cm[cd], confusion_floor)             # (n, K): row c_d, column c
    src = source_posterior_from_densities(logf, cd)                # (n, P, K)
    kl = _kl_all_classes(logf, logpost, cd, floor)
    return (src * kl * inv_w[:, None, :]).sum(-1), single


def aw_ada_from_densities(logf, posterior, confusion, confusion_floor: float = 1e-4, floor: float = PMF_FLOOR):
    out, single = aw_ada_terms(logf, posterior, confusion, confusion_floor, floor)
    out = out[:, 0] if out.shape[1] == 1 else out
    return float(out[0]) if single else out


def lawa_from_pair_densities(logf_pairs, posterior, confusion, beta_i, beta_j,
                             confusion_floor: float = 1e-4, floor: float = PMF_FLOOR):
    """L-AWA layer statistic from pair log densities (n, P, K) or (P, K)."""
    logf_pairs = np.asarray(logf_pairs, dtype=float)
    single = np.asarray(posterior).ndim == 1
    if single:
        logf_pairs = logf_pairs[None]
    if logf_pairs.shape[1] == 0:
        raise ValueError("no retained pairs")
    terms, _ = aw_ada_terms(logf_pairs, np.atleast_2d(posterior), confusion, confusion_floor, floor)
    w = np.asarray(beta_i) * np.asarray(beta_j)
    out = (terms * w).sum(-1) / terms.shape[1]
    return float(out[0]) if single else out


# -- net-level statistics ----------------------------------------------------

def _trace(net, x):
    tr = forward_batch(net, np.atleast_2d(x))
    return tr, np.asarray(x).ndim == 1


def basic_ada_statistic(net, nulls, x, layer: int):
    tr, single = _trace(net, x)
    out = basic_ada_from_densities(nulls.joint_log_densities(layer, tr.layer(layer)), tr.posterior)
    return float(out[0]) if single else out


def source_class_posterior(nulls, layer: int, z, c_d: int, pair=None) -> np.ndarray:
    """Source-class probabilities over c != c_d for one activation vector ``z``.

    With ``pair=(i, j)`` the pair null of a pairwise set is used.
    """
    z = np.atleast_2d(z)
    if pair is None:
        logf = nulls.joint_log_densities(layer, z)[0]
    else:
        logf = np.array([float(_pair_model_density(nulls, layer, pair, c, z[0])) for c in range(nulls.n_classes)])
    return source_posterior_from_densities(logf, c_d)


def _pair_model_density(nulls, layer, pair, c, z):
    from .nullmodel import gmm_log_density
    return gmm_log_density(nulls.model(layer, c, pair), np.asarray(z)[list(pair)])


def aw_ada_statistic(net, nulls, confusion, x, layer: int, confusion_floor: float = 1e-4):
    tr, single = _trace(net, x)
    out = aw_ada_from_densities(nulls.joint_log_densities(layer, tr.layer(layer)), tr.posterior,
                                confusion, confusion_floor)
    return float(out[0]) if single else out


def _lawa_layer(net, nulls, confusion, tr, layer, confusion_floor):
    beta = beta_weights(net, layer)
    pairs = nulls.pairs.get(layer)
    if not pairs:
        raise ValueError(f"no retained pairs for layer {layer}")
    idx = np.array(pairs)
    logf = nulls.pair_log_densities(layer, tr.layer(layer))
    return lawa_from_pair_densities(logf, tr.posterior, confusion, beta[idx[:, 0]], beta[idx[:, 1]],
                                    confusion_floor)


def lawa_layer_statistic(net, nulls, confusion, x, layer: int, confusion_floor: float = 1e-4):
    tr, single = _trace(net, x)
    out = _lawa_layer(net, nulls, confusion, tr, layer, confusion_floor)
    return float(out[0]) if single else out


def layer_statistics(net, nulls, confusion, X, cfg: AdaConfig) -> np.ndarray:
    """(n, L) per-layer statistics of the configured variant for rows of ``X``."""
    tr = forward_batch(net, np.atleast_2d(X))
    cols = []
    for layer in cfg.layers:
        if cfg.variant == "lawa-maxkl":
            s = _lawa_layer(net, nulls, confusion, tr, layer, cfg.confusion_floor)
        else:
            logf = nulls.joint_log_densities(layer, tr.layer(layer))
            if cfg.variant == "aw":
                s = aw_ada_from_densities(logf, tr.posterior, confusion, cfg.confusion_floor, cfg.pmf_floor)
            else:
                s = basic_ada_from_densities(logf, tr.posterior, cfg.pmf_floor)
        cols.append(np.atleast_1d(s))
    return np.stack(cols, axis=-1)


def lawa_maxkl(net, nulls, confusion, x, cfg: AdaConfig):
    """Max over the configured layers of the per-layer statistic."""
    out = layer_statistics(net, nulls, confusion, x, cfg).max(axis=-1)
    return float(out[0]) if np.asarray(x).ndim == 1 else out


def confusion_to_dict(c: ConfusionMatrix) -> dict:
    return {"matrix": c.matrix.tolist(), "alpha": c.alpha}


def confusion_from_dict(d: dict) -> ConfusionMatrix:
    try:
        return ConfusionMatrix(np.array(d["matrix"], dtype=float), float(d["alpha"]))
    except KeyError as exc:
        raise ValueError(f"malformed confusion document: {exc}") from exc
