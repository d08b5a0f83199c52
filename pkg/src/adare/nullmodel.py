"""Class-conditional null densities of hidden-layer activations.

Each null is a diagonal-covariance Gaussian mixture fit by EM, with the
number of components picked by BIC. Mixtures for relu layers live in the
log domain: they model ``t = ln(z + eps)`` and report densities of ``z``
(the Jacobian term is included), so exact-zero activations stay finite.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.special import logsumexp

from .dataio import child_seed
from .netcore import FeedforwardNet, forward_batch

LOG_2PI = float(np.log(2.0 * np.pi))
DENSITY_FLOOR = -1e300


@dataclass
class EmConfig:
    components: tuple[int, ...] = (1, 2, 3)
    max_iter: int = 200
    tol: float = 1e-6
    restarts: int = 2
    seed: int = 0
    log_eps: float = 1e-3
    var_floor: float = 1e-6

    def __post_init__(self):
        self.components = tuple(int(m) for m in self.components)
        if not self.components or min(self.components) < 1:
            raise ValueError("component counts must all be >= 1")
        if self.max_iter < 1 or self.restarts < 1:
            raise ValueError("max_iter and restarts must be >= 1")
        if self.log_eps <= 0 or self.var_floor <= 0:
            raise ValueError("log_eps and var_floor must be positive")


@dataclass
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    domain: str = "linear"
    log_eps: float = 1e-3
    # mean log-likelihood per EM iteration of the selected run (fitting diagnostics only)
    ll_history: list = field(default_factory=list, compare=False, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.variances = np.atleast_2d(np.asarray(self.variances, dtype=float))
        m = len(self.weights)
        if m < 1 or self.means.shape[0] != m or self.variances.shape != self.means.shape:
            raise ValueError("mixture parameter shapes disagree")
        if abs(self.weights.sum() - 1.0) > 1e-9 or np.any(self.weights < 0):
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        if np.any(self.variances <= 0):
            raise ValueError("mixture variances must be positive")
        if self.domain not in ("linear", "log"):
            raise ValueError(f"unknown domain {self.domain!r}")

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return len(self.weights)


def _component_logpdf(x, mu, var):
    # x (..., N, d); mu, var (..., M, d) -> (..., N, M)
    diff = x[..., :, None, :] - mu[..., None, :, :]
    return -0.5 * (x.shape[-1] * LOG_2PI + np.log(var).sum(-1)[..., None, :]
                   + (diff * diff / var[..., None, :, :]).sum(-1))


def to_domain(z, domain: str, log_eps: float):
    z = np.asarray(z, dtype=float)
    if domain == "log":
        if np.any(z <= -log_eps):
            raise ValueError("log-domain mixture needs activations > -log_eps")
        return np.log(z + log_eps)
    return z


def mixture_log_density(g: GaussianMixture, Z) -> np.ndarray:
    """Log density of each row of ``Z`` under ``g`` (log-sum-exp over components)."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if Z.shape[1] != g.dim:
        raise ValueError(f"point dimension {Z.shape[1]} does not match mixture dimension {g.dim}")
    T = to_domain(Z, g.domain, g.log_eps)
    with np.errstate(divide="ignore"):
        logw = np.log(g.weights)
    out = logsumexp(_component_logpdf(T, g.means, g.variances) + logw, axis=-1)
    if g.domain == "log":
        out = out - T.sum(-1)
    return np.maximum(out, DENSITY_FLOOR)


def gmm_log_density(g: GaussianMixture, z) -> float:
    z = np.asarray(z, dtype=float)
    if z.ndim != 1:
        z = z.reshape(-1)
    return float(mixture_log_density(g, z[None, :])[0])


# -- EM ----------------------------------------------------------------------

def _init_params(x, m, rng, var_floor):
    """Seeded k-means++ seeding followed by one hard assignment."""
    n, d = x.shape
    centers = [x[rng.integers(n)]]
    for _ in range(1, m):
        d2 = np.min([((x - c) ** 2).sum(1) for c in centers], axis=0)
        total = d2.sum()
        idx = rng.integers(n) if total <= 0 else rng.choice(n, p=d2 / total)
        centers.append(x[idx])
    centers = np.array(centers)
    assign = np.argmin(((x[:, None, :] - centers[None]) ** 2).sum(-1), axis=1)
    glob_var = np.maximum(x.var(0), var_floor)
    weights = np.empty(m)
    mu = centers.copy()
    var = np.tile(glob_var, (m, 1))
    for k in range(m):
        members = x[assign == k]
        weights[k] = max(len(members), 1)
        if len(members):
            mu[k] = members.mean(0)
        if len(members) > 1:
            var[k] = np.maximum(members.var(0), var_floor)
    return np.log(weights / weights.sum()), mu, var


def _lse(a, axis=-1):
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return np.log(np.sum(np.exp(a - m), axis=axis)) + np.squeeze(m, axis)


def _em_batch(X, logw, mu, var, max_iter, tol, var_floor):
    """Run EM on B independent problems at once.

    X is (B, N, d); parameters carry a leading B axis. A problem stops
    updating once its mean log-likelihood gain drops below ``tol``; only
    still-active problems are carried through later iterations.
    Returns the final parameters, final mean log-likelihoods and per-problem
    histories. Raises RuntimeError if any likelihood decreases by more than 1e-9.
    """
    B, N, _ = X.shape
    logw, mu, var = logw.copy(), mu.copy(), var.copy()
    history = [[] for _ in range(B)]
    final_ll = np.empty(B)
    act = np.arange(B)
    prev = np.full(B, -np.inf)
    Xa, lw, m, v = X, logw, mu, var
    for it in range(max_iter + 1):
        lp = _component_logpdf(Xa, m, v) + lw[:, None, :]
        lse = _lse(lp)
        ll = lse.mean(-1)
        for b, val in zip(act, ll):
            history[b].append(float(val))
        drop = prev - ll
        if np.any(drop > 1e-9):
            raise RuntimeError(f"EM log-likelihood decreased by {drop.max():.3e}")
        done = (ll - prev < tol) | (it == max_iter)
        if done.any():
            idx = act[done]
            logw[idx], mu[idx], var[idx], final_ll[idx] = lw[done], m[done], v[done], ll[done]
        keep = ~done
        if not keep.any():
            break
        act, Xa, prev = act[keep], Xa[keep], ll[keep]
        lp, lse, lw, m, v = lp[keep], lse[keep], lw[keep], m[keep], v[keep]
        resp = np.exp(lp - lse[..., None])
        nk = resp.sum(1)
        alive = nk > 1e-10
        safe = np.where(alive, nk, 1.0)[..., None]
        new_mu = np.matmul(np.swapaxes(resp, 1, 2), Xa) / safe
        ex2 = np.matmul(np.swapaxes(resp, 1, 2), Xa * Xa) / safe
        new_var = np.maximum(ex2 - new_mu * new_mu, var_floor)
        with np.errstate(divide="ignore"):
            lw = np.where(alive, np.log(nk / N), -np.inf)
        m = np.where(alive[..., None], new_mu, m)
        v = np.where(alive[..., None], new_var, v)
    return logw, mu, var, final_ll, history


def _fit_batch(X, seeds, cfg: EmConfig, domain: str) -> list[GaussianMixture]:
    """Fit one BIC-selected mixture per problem in ``X`` (B, N, d)."""
    X = np.asarray(X, dtype=float)
    B, N, d = X.shape
    if N < 2 * max(cfg.components):
        raise ValueError(f"need at least {2 * max(cfg.components)} samples, got {N}")
    T = to_domain(X, domain, cfg.log_eps)
    best_bic = np.full(B, np.inf)
    chosen = [None] * B
    for m in sorted(cfg.components):
        top_ll = np.full(B, -np.inf)
        top = [None] * B
        for r in range(cfg.restarts):
            inits = [_init_params(T[b], m, np.random.default_rng([seeds[b], m, r]), cfg.var_floor)
                     for b in range(B)]
            logw0, mu0, var0 = (np.stack(p) for p in zip(*inits))
            logw, mu, var, ll, hist = _em_batch(T, logw0, mu0, var0, cfg.max_iter, cfg.tol, cfg.var_floor)
            for b in range(B):
                if ll[b] > top_ll[b]:
                    top_ll[b] = ll[b]
                    top[b] = (logw[b], mu[b], var[b], hist[b])
        for b in range(B):
            logw, mu, var, hist = top[b]
            keep = np.isfinite(logw)
            n_act = int(keep.sum())
            n_params = (n_act - 1) + 2 * n_act * d
            bic = -2.0 * N * top_ll[b] + n_params * np.log(N)
            if bic < best_bic[b]:
                best_bic[b] = bic
                w = np.exp(logw[keep])
                chosen[b] = GaussianMixture(w / w.sum(), mu[keep], var[keep], domain, cfg.log_eps, hist)
    return chosen


def fit_gmm(samples, cfg: EmConfig | None = None, domain: str = "linear") -> GaussianMixture:
    """Fit a diagonal Gaussian mixture to ``samples`` (rows), order chosen by BIC."""
    cfg = cfg or EmConfig()
    X = np.asarray(samples, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return _fit_batch(X[None], [cfg.seed], cfg, domain)[0]


# -- null model sets ---------------------------------------------------------

def select_pairs(beta: np.ndarray, pair_cap: int) -> list[tuple[int, int]]:
    """All feature pairs if they fit under ``pair_cap``, else the top pairs by
    ``beta_i * beta_j`` (ties by lexicographic pair). Returned in sorted order."""
    pairs = list(combinations(range(len(beta)), 2))
    if len(pairs) <= pair_cap:
        return pairs
    ranked = sorted(pairs, key=lambda p: (-beta[p[0]] * beta[p[1]], p))
    return sorted(ranked[:pair_cap])


@dataclass
class NullModelSet:
    mode: str
    layers: list[int]
    domains: dict[int, str]
    n_classes: int
    models: dict
    pairs: dict[int, list[tuple[int, int]]] = field(default_factory=dict)
    _stacked: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.mode not in ("joint", "pairwise"):
            raise ValueError(f"unknown null-model mode {self.mode!r}")

    def key(self, layer, c, pair=None):
        return (layer, c) if self.mode == "joint" else (layer, tuple(pair), c)

    def model(self, layer, c, pair=None) -> GaussianMixture:
        k = self.key(layer, c, pair)
        try:
            return self.models[k]
        except KeyError:
            raise KeyError(f"missing null model for key {k}") from None

    def joint_log_densities(self, layer: int, Z) -> np.ndarray:
        """(n, K) log densities of layer activations ``Z`` under each class null."""
        if self.mode != "joint":
            raise ValueError("joint densities need a joint-mode null set")
        Z = np.atleast_2d(Z)
        return np.stack([mixture_log_density(self.model(layer, c), Z) for c in range(self.n_classes)], axis=-1)

    def _stack(self, layer):
        if layer not in self._stacked:
            pairs = self.pairs.get(layer)
            if not pairs:
                raise KeyError(f"no retained pairs for layer {layer}")
            per_class = []
            for c in range(self.n_classes):
                gs = [self.model(layer, c, p) for p in pairs]
                mmax = max(g.n_components for g in gs)
                logw = np.full((len(gs), mmax), -np.inf)
                mu = np.zeros((len(gs), mmax, 2))
                var = np.ones((len(gs), mmax, 2))
                for i, g in enumerate(gs):
                    m = g.n_components
                    with np.errstate(divide="ignore"):
                        logw[i, :m] = np.log(g.weights)
                    mu[i, :m] = g.means
                    var[i, :m] = g.variances
                per_class.append((logw, mu, var))
            idx = np.array(pairs)
            self._stacked[layer] = (idx[:, 0], idx[:, 1], per_class)
        return self._stacked[layer]

    def pair_log_densities(self, layer: int, Z) -> np.ndarray:
        """(n, P, K) log densities of every retained pair of ``Z`` under each class null."""
        if self.mode != "pairwise":
            raise ValueError("pair densities need a pairwise-mode null set")
        I, J, per_class = self._stack(layer)
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        T = to_domain(np.stack([Z[:, I], Z[:, J]], axis=-1), self.domains[layer], self.log_eps)  # (n, P, 2)
        Tp = np.swapaxes(T, 0, 1)  # (P, n, 2)
        out = []
        for logw, mu, var in per_class:
            lp = logsumexp(_component_logpdf(Tp, mu, var) + logw[:, None, :], axis=-1)  # (P, n)
            if self.domains[layer] == "log":
                lp = lp - Tp.sum(-1)
            out.append(np.maximum(lp.T, DENSITY_FLOOR))
        return np.stack(out, axis=-1)

    @property
    def log_eps(self) -> float:
        return next(iter(self.models.values())).log_eps


def layer_domain(net: FeedforwardNet, layer: int) -> str:
    return "log" if net.hidden_activation(layer) == "relu" else "linear"


def fit_null_models(net: FeedforwardNet, data, layers, mode: str = "pairwise", pair_cap: int = 1000,
                    cfg: EmConfig | None = None, min_per_class: int = 20) -> NullModelSet:
    """Fit class-conditional nulls of the given hidden layers' activations on ``data``."""
    from .adastat import beta_weights

    cfg = cfg or EmConfig()
    layers = [int(l) for l in layers]
    if not layers:
        raise ValueError("empty layer list")
    if mode not in ("joint", "pairwise"):
        raise ValueError(f"unknown null-model mode {mode!r}")
    counts = np.bincount(data.y, minlength=net.n_classes)
    for c, n in enumerate(counts):
        if n < min_per_class:
            raise ValueError(f"class {c} has {n} samples; at least {min_per_class} required")
    trace = forward_batch(net, data.X)
    models, pairs, domains = {}, {}, {}
    for layer in layers:
        Z = trace.layer(layer)
        domain = domains[layer] = layer_domain(net, layer)
        if mode == "joint":
            for c in range(net.n_classes):
                seed = child_seed(cfg.seed, f"{layer}/{c}")
                models[(layer, c)] = _fit_batch(Z[data.y == c][None], [seed], cfg, domain)[0]
            continue
        pairs[layer] = select_pairs(beta_weights(net, layer), pair_cap)
        if not pairs[layer]:
            raise ValueError(f"layer {layer} has fewer than two features")
        idx = np.array(pairs[layer])
        for c in range(net.n_classes):
            Zc = Z[data.y == c]
            Xb = np.stack([Zc[:, idx[:, 0]], Zc[:, idx[:, 1]]], axis=-1)  # (n, P, 2)
            seeds = [child_seed(cfg.seed, f"{layer}/{i},{j}/{c}") for i, j in pairs[layer]]
            for p, g in zip(pairs[layer], _fit_batch(np.swapaxes(Xb, 0, 1), seeds, cfg, domain)):
                models[(layer, p, c)] = g
    models = dict(sorted(models.items()))
    return NullModelSet(mode, layers, domains, net.n_classes, models, pairs)


def mixture_to_dict(g: GaussianMixture) -> dict:
    return {"weights": g.weights.tolist(), "means": g.means.tolist(), "variances": g.variances.tolist(),
            "domain": g.domain, "log_eps": g.log_eps}


def mixture_from_dict(d: dict) -> GaussianMixture:
    return GaussianMixture(np.array(d["weights"]), np.array(d["means"]), np.array(d["variances"]),
                           d["domain"], float(d["log_eps"]))


def nullset_to_dict(s: NullModelSet) -> dict:
    entries = []
    for key, g in s.models.items():
        layer, c = key[0], key[-1]
        pair = list(key[1]) if s.mode == "pairwise" else None
        entries.append({"layer": layer, "pair": pair, "class": c, "mixture": mixture_to_dict(g)})
    return {
        "mode": s.mode,
        "layers": list(s.layers),
        "domains": {str(k): v for k, v in s.domains.items()},
        "n_classes": s.n_classes,
        "pairs": {str(k): [list(p) for p in v] for k, v in s.pairs.items()},
        "models": entries,
    }


def nullset_from_dict(d: dict) -> NullModelSet:
    try:
        mode = d["mode"]
        models = {}
        for e in d["models"]:
            key = (int(e["layer"]), int(e["class"])) if mode == "joint" else \
                (int(e["layer"]), tuple(int(i) for i in e["pair"]), int(e["class"]))
            models[key] = mixture_from_dict(e["mixture"])
        return NullModelSet(
            mode=mode,
            layers=[int(l) for l in d["layers"]],
            domains={int(k): v for k, v in d["domains"].items()},
            n_classes=int(d["n_classes"]),
            models=models,
            pairs={int(k): [tuple(p) for p in v] for k, v in d["pairs"].items()},
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed null-model document: {exc}") from exc
