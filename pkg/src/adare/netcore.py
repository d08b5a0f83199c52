"""Dense feedforward classifier with a softmax head.

Weights are stored as ``(fan_in, fan_out)`` matrices so a layer computes
``act(h @ W + b)``. The last layer's output is the logit vector fed to the
softmax; every earlier layer is a hidden layer whose post-activation vector
is exposed in the :class:`ActivationTrace`. Hidden layers are indexed from 1.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

ACTIVATIONS = ("relu", "sigmoid", "linear")


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    label: int

    def __post_init__(self):
        f = np.asarray(self.features, dtype=float)
        if not np.all(np.isfinite(f)) or f.min(initial=0.0) < 0.0 or f.max(initial=0.0) > 1.0:
            raise ValueError("sample features must be finite and within [0, 1]")
        if self.label < 0:
            raise ValueError("negative label")
        object.__setattr__(self, "features", f)


@dataclass
class Layer:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ValueError("layer weight/bias shapes disagree")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValueError("non-finite layer parameters")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]


@dataclass
class FeedforwardNet:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a net needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError(f"layer dims do not chain: {a.out_dim} -> {b.in_dim}")

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def n_classes(self) -> int:
        return self.layers[-1].out_dim

    @property
    def n_hidden(self) -> int:
        return len(self.layers) - 1

    def hidden_width(self, layer: int) -> int:
        _check_hidden_index(self, layer)
        return self.layers[layer - 1].out_dim

    def hidden_activation(self, layer: int) -> str:
        _check_hidden_index(self, layer)
        return self.layers[layer - 1].activation

    def copy(self) -> "FeedforwardNet":
        return FeedforwardNet([Layer(l.weights.copy(), l.bias.copy(), l.activation) for l in self.layers])


@dataclass
class ActivationTrace:
    hidden: list[np.ndarray]
    posterior: np.ndarray

    def layer(self, index: int) -> np.ndarray:
        """Post-activation vector of hidden layer ``index`` (1-based)."""
        if not 1 <= index <= len(self.hidden):
            raise IndexError(f"hidden layer {index} out of range 1..{len(self.hidden)}")
        return self.hidden[index - 1]


@dataclass
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 0.1
    batch_size: int = 16
    seed: int = 0
    init_scale: float = 1.0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.init_scale <= 0:
            raise ValueError("init scale must be positive")


def _check_hidden_index(net: FeedforwardNet, layer: int) -> None:
    if not 1 <= layer <= net.n_hidden:
        raise IndexError(f"hidden layer {layer} out of range 1..{net.n_hidden}")


def init_net(dims: Sequence[int], activation: str | Sequence[str] = "relu",
             init_scale: float = 1.0, seed: int = 0) -> FeedforwardNet:
    """Build a net with layer sizes ``dims`` (input, hidden..., classes).

    Weights are uniform in ``[-s, s]`` with ``s = init_scale / sqrt(fan_in)``;
    biases start at zero. ``activation`` applies to the hidden layers, the
    output layer is always linear (logits).
    """
    dims = list(dims)
    if len(dims) < 2:
        raise ValueError("need at least input and output dims")
    n_hidden = len(dims) - 2
    if isinstance(activation, str):
        acts = [activation] * n_hidden
    else:
        acts = list(activation)
        if len(acts) != n_hidden:
            raise ValueError("one activation per hidden layer required")
    acts.append("linear")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out, act in zip(dims[:-1], dims[1:], acts):
        s = init_scale / np.sqrt(fan_in)
        layers.append(Layer(rng.uniform(-s, s, size=(fan_in, fan_out)), np.zeros(fan_out), act))
    return FeedforwardNet(layers)


def _activate(kind: str, a: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(a, 0.0)
    if kind == "sigmoid":
        return expit(a)
    return a


def _activation_grad(kind: str, a: np.ndarray, h: np.ndarray) -> np.ndarray:
    # derivative of the activation given pre-activation a and output h
    if kind == "relu":
        return (a > 0).astype(float)
    if kind == "sigmoid":
        return h * (1.0 - h)
    return np.ones_like(a)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _as_batch(net: FeedforwardNet, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise ValueError(f"input dimension {X.shape[-1]} does not match net input {net.input_dim}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite input")
    return X, single


def _forward_cache(net: FeedforwardNet, X: np.ndarray):
    pre, post = [], [X]
    h = X
    for layer in net.layers:
        a = h @ layer.weights + layer.bias
        h = _activate(layer.activation, a)
        pre.append(a)
        post.append(h)
    return pre, post, softmax(post[-1])


def forward_batch(net: FeedforwardNet, X) -> ActivationTrace:
    """Vectorised forward pass; trace arrays carry a leading sample axis."""
    X, _ = _as_batch(net, X)
    _, post, prob = _forward_cache(net, X)
    return ActivationTrace(hidden=post[1:-1], posterior=prob)


def forward_with_activations(net: FeedforwardNet, x) -> ActivationTrace:
    X, single = _as_batch(net, x)
    trace = forward_batch(net, X)
    if single:
        return ActivationTrace([h[0] for h in trace.hidden], trace.posterior[0])
    return trace


def posteriors(net: FeedforwardNet, X) -> np.ndarray:
    X, single = _as_batch(net, X)
    p = _forward_cache(net, X)[2]
    return p[0] if single else p


def predict(net: FeedforwardNet, x):
    """MAP class; ``np.argmax`` already breaks ties toward the lowest index."""
    p = posteriors(net, x)
    return int(np.argmax(p)) if p.ndim == 1 else np.argmax(p, axis=1)


def _backprop(net, pre, post, grad_logits, want_params=True):
    """Propagate d(objective)/d(logits) back through the net.

    Returns (param grads ordered like ``net.layers``, input gradient).
    """
    grads = [None] * len(net.layers)
    g = grad_logits
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        g = g * _activation_grad(layer.activation, pre[i], post[i + 1])
        if want_params:
            grads[i] = (post[i].T @ g, g.sum(axis=0))
        g = g @ layer.weights.T
    return grads, g


def input_gradient(net: FeedforwardNet, x, c, objective: str = "posterior") -> np.ndarray:
    """Gradient of a scalar network output with respect to the input.

    ``objective="posterior"`` differentiates ``P[C=c | x]``;
    ``objective="loss"`` differentiates the cross-entropy ``-ln P[C=c | x]``.
    ``x`` may be a single vector or a batch of rows, with ``c`` a scalar or
    one class per row.
    """
    X, single = _as_batch(net, x)
    c = np.broadcast_to(np.asarray(c, dtype=int), (X.shape[0],))
    if np.any(c < 0) or np.any(c >= net.n_classes):
        raise ValueError("class index out of range")
    pre, post, prob = _forward_cache(net, X)
    onehot = np.eye(net.n_classes)[c]
    if objective == "posterior":
        pc = prob[np.arange(len(c)), c][:, None]
        grad_logits = pc * (onehot - prob)
    elif objective == "loss":
        grad_logits = prob - onehot
    else:
        raise ValueError(f"unknown objective {objective!r}")
    _, gx = _backprop(net, pre, post, grad_logits, want_params=False)
    return gx[0] if single else gx


def mean_cross_entropy(net: FeedforwardNet, X, y) -> float:
    p = posteriors(net, np.atleast_2d(X))
    y = np.asarray(y, dtype=int)
    return float(-np.mean(np.log(np.maximum(p[np.arange(len(y)), y], 1e-300))))


def train(net: FeedforwardNet, data, cfg: TrainConfig,
          callback: Callable[[int, FeedforwardNet], None] | None = None) -> FeedforwardNet:
    """Mini-batch SGD on mean cross-entropy; returns a new trained net.

    ``data`` is anything with ``X`` and ``y`` attributes (a :class:`Dataset`).
    The shuffle order comes from ``cfg.seed`` so a run is bit-reproducible.
    ``callback(epoch, net)`` is invoked after each epoch.
    """
    X = np.asarray(data.X, dtype=float)
    y = np.asarray(data.y, dtype=int)
    if len(X) == 0:
        raise ValueError("cannot train on an empty dataset")
    if np.any(y < 0) or np.any(y >= net.n_classes):
        raise ValueError("label out of range for this net")
    _as_batch(net, X)
    net = net.copy()
    rng = np.random.default_rng(cfg.seed)
    eye = np.eye(net.n_classes)
    n = len(X)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            pre, post, prob = _forward_cache(net, X[idx])
            grad_logits = (prob - eye[y[idx]]) / len(idx)
            grads, _ = _backprop(net, pre, post, grad_logits)
            for layer, (gw, gb) in zip(net.layers, grads):
                layer.weights -= cfg.learning_rate * gw
                layer.bias -= cfg.learning_rate * gb
        if callback is not None:
            callback(epoch, net)
    return net


def net_to_dict(net: FeedforwardNet) -> dict:
    return {
        "dims": [net.input_dim] + [l.out_dim for l in net.layers],
        "activations": [l.activation for l in net.layers],
        "weights": [l.weights.tolist() for l in net.layers],
        "biases": [l.bias.tolist() for l in net.layers],
    }


def net_from_dict(d: dict) -> FeedforwardNet:
    try:
        layers = [Layer(np.array(w, dtype=float), np.array(b, dtype=float), a)
                  for w, b, a in zip(d["weights"], d["biases"], d["activations"], strict=True)]
        dims = list(d["dims"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed net document: {exc}") from exc
    net = FeedforwardNet(layers)
    if dims != [net.input_dim] + [l.out_dim for l in layers]:
        raise ValueError("net document dims disagree with weight shapes")
    return net
