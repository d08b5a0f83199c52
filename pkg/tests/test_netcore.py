import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adare.dataio import Dataset
from adare.netcore import (
    FeedforwardNet, Layer, Sample, TrainConfig, forward_with_activations, init_net, input_gradient,
    mean_cross_entropy, predict, train,
)
from oracles import central_diff


def zero_net(dims, act="relu"):
    layers = []
    acts = [act] * (len(dims) - 2) + ["linear"]
    for a, b, kind in zip(dims[:-1], dims[1:], acts):
        layers.append(Layer(np.zeros((a, b)), np.zeros(b), kind))
    return FeedforwardNet(layers)


def linear_net(W, b=None):
    W = np.asarray(W, dtype=float)
    return FeedforwardNet([Layer(W, np.zeros(W.shape[1]) if b is None else b, "linear")])


@pytest.mark.parametrize("act,expected", [("relu", 0.0), ("sigmoid", 0.5), ("linear", 0.0)])
def test_zero_weight_net_is_constant(act, expected):
    net = zero_net([5, 4, 3, 3], act)
    tr = forward_with_activations(net, np.random.default_rng(0).uniform(size=5))
    for h in tr.hidden:
        np.testing.assert_array_equal(h, expected)
    np.testing.assert_allclose(tr.posterior, 1 / 3, atol=1e-15)


def test_hand_computed_two_layer_net():
    W1 = np.array([[1.0, -2.0], [0.5, 3.0]])
    b1 = np.array([0.1, -0.2])
    W2 = np.array([[2.0, -1.0], [-0.5, 1.5]])
    b2 = np.array([0.3, 0.0])
    net = FeedforwardNet([Layer(W1, b1, "relu"), Layer(W2, b2, "linear")])
    x = np.array([0.4, 0.9])
    # hidden pre-activations: 0.4*1 + 0.9*0.5 + 0.1 = 0.95 ; 0.4*-2 + 0.9*3 - 0.2 = 1.7
    h = np.array([0.95, 1.7])
    logits = np.array([0.95 * 2.0 + 1.7 * -0.5 + 0.3, 0.95 * -1.0 + 1.7 * 1.5])
    p0 = 1.0 / (1.0 + np.exp(logits[1] - logits[0]))
    tr = forward_with_activations(net, x)
    np.testing.assert_allclose(tr.hidden[0], h, rtol=0, atol=1e-12)
    np.testing.assert_allclose(tr.posterior, [p0, 1 - p0], rtol=0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_posterior_normalised_and_activation_ranges(seed):
    rng = np.random.default_rng(seed)
    net = init_net([6, 5, 4, 3], ["relu", "sigmoid"], init_scale=3.0, seed=seed)
    tr = forward_with_activations(net, rng.uniform(size=6))
    assert abs(tr.posterior.sum() - 1.0) <= 1e-9
    assert np.all(tr.posterior >= 0)
    assert np.all(tr.layer(1) >= 0)
    assert np.all((tr.layer(2) > 0) & (tr.layer(2) < 1))


def test_forward_errors():
    net = init_net([3, 2, 2])
    with pytest.raises(ValueError):
        forward_with_activations(net, np.zeros(4))
    with pytest.raises(ValueError):
        forward_with_activations(net, np.array([0.1, np.nan, 0.2]))


def test_predict_tie_break_and_argmax():
    assert predict(zero_net([4, 3, 3]), np.full(4, 0.3)) == 0
    net = linear_net(np.zeros((2, 3)), np.log([0.1, 0.7, 0.2]))
    np.testing.assert_allclose(forward_with_activations(net, [0.5, 0.5]).posterior, [0.1, 0.7, 0.2])
    assert predict(net, [0.5, 0.5]) == 1


def test_predict_matches_posterior_argmax():
    rng = np.random.default_rng(3)
    net = init_net([8, 6, 4], seed=4, init_scale=2.0)
    X = rng.uniform(size=(100, 8))
    for x in X:
        assert predict(net, x) == int(np.argmax(forward_with_activations(net, x).posterior))
    np.testing.assert_array_equal(predict(net, X), [predict(net, x) for x in X])


def test_zero_net_has_zero_input_gradient():
    g = input_gradient(zero_net([4, 3, 2]), np.full(4, 0.5), 1)
    np.testing.assert_array_equal(g, 0.0)


def test_input_gradient_matches_finite_differences():
    rng = np.random.default_rng(2024)
    for case in range(50):
        acts = [["relu", "relu"], ["sigmoid", "sigmoid"], ["relu", "sigmoid"], ["linear", "sigmoid"]][case % 4]
        net = init_net([5, 7, 4, 3], acts, init_scale=2.0, seed=case)
        x = rng.uniform(size=5)
        c = int(rng.integers(3))
        for objective in ("posterior", "loss"):
            def f(v):
                p = forward_with_activations(net, v).posterior[c]
                return p if objective == "posterior" else -np.log(p)
            g = input_gradient(net, x, c, objective)
            fd = central_diff(f, x)
            np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-9)


def test_linear_softmax_gradient_closed_form():
    W = np.array([[0.5, -1.0], [2.0, 0.3], [-0.7, 0.1]])
    net = linear_net(W)
    x = np.array([0.2, 0.6, 0.9])
    p0 = forward_with_activations(net, x).posterior[0]
    expected = p0 * (1 - p0) * (W[:, 0] - W[:, 1])
    np.testing.assert_allclose(input_gradient(net, x, 0), expected, rtol=1e-12)


def test_input_gradient_errors():
    net = init_net([3, 2, 2])
    with pytest.raises(ValueError):
        input_gradient(net, np.zeros(2), 0)
    with pytest.raises(ValueError):
        input_gradient(net, np.zeros(3), 5)


def _blobs(seed=0, n=40):
    rng = np.random.default_rng(seed)
    X = np.concatenate([rng.uniform(0.0, 0.3, size=(n, 4)), rng.uniform(0.7, 1.0, size=(n, 4))])
    return Dataset(X, np.repeat([0, 1], n), 2)


def test_zero_epochs_returns_initial_weights():
    net = init_net([4, 3, 2], seed=1)
    out = train(net, _blobs(), TrainConfig(epochs=0))
    for a, b in zip(net.layers, out.layers):
        np.testing.assert_array_equal(a.weights, b.weights)
        np.testing.assert_array_equal(a.bias, b.bias)


def test_single_repeated_sample_is_learned():
    data = Dataset(np.tile([0.2, 0.9, 0.4], (8, 1)), np.full(8, 2), 3)
    net = train(init_net([3, 4, 3], seed=0), data, TrainConfig(epochs=200, learning_rate=0.1, batch_size=4))
    assert predict(net, [0.2, 0.9, 0.4]) == 2


def test_training_is_bit_reproducible():
    cfg = TrainConfig(epochs=5, learning_rate=0.2, batch_size=7, seed=11)
    a = train(init_net([4, 5, 2], seed=3), _blobs(), cfg)
    b = train(init_net([4, 5, 2], seed=3), _blobs(), cfg)
    for la, lb in zip(a.layers, b.layers):
        assert la.weights.tobytes() == lb.weights.tobytes()
        assert la.bias.tobytes() == lb.bias.tobytes()


def test_training_loss_decreases_on_separable_data():
    data = _blobs(seed=5)
    net = init_net([4, 6, 2], seed=2)
    losses = [mean_cross_entropy(net, data.X, data.y)]
    train(net, data, TrainConfig(epochs=5, learning_rate=0.1, batch_size=8, seed=1),
          callback=lambda epoch, n: losses.append(mean_cross_entropy(n, data.X, data.y)))
    increases = [b - a for a, b in zip(losses, losses[1:]) if b > a]
    assert len(increases) <= 1 and all(d <= 1e-3 for d in increases)


def test_train_rejects_bad_data():
    net = init_net([2, 2, 2])
    with pytest.raises(ValueError):
        train(net, Dataset(np.zeros((0, 2)), np.zeros(0, dtype=int), 2), TrainConfig())
    with pytest.raises(ValueError):
        train(net, Dataset(np.zeros((2, 2)), np.array([0, 2]), 3), TrainConfig())


def test_sample_and_config_validation():
    Sample(np.array([0.0, 1.0]), 1)
    with pytest.raises(ValueError):
        Sample(np.array([1.5]), 0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        FeedforwardNet([Layer(np.zeros((2, 3)), np.zeros(3)), Layer(np.zeros((2, 2)), np.zeros(2))])
