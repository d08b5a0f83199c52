"""Train a small dense classifier and look inside it.

Generates compact Gaussian blobs, trains the victim net, prints per-layer
activation shapes for one image and compares the analytic input gradient
with central differences.
"""
import numpy as np

from adare.dataio import SyntheticSpec, gen_synthetic, split
from adare.netcore import TrainConfig, forward_with_activations, init_net, input_gradient, predict, train

data = gen_synthetic(SyntheticSpec(spread=0.05, mean_range=(0.45, 0.55), seed=0))
train_set, heldout, test = split(data, (0.6, 0.2, 0.2), seed=0)
print(f"{len(train_set)} training images of dimension {data.dim}, {data.n_classes} classes")

net = init_net([data.dim, 16, 8, data.n_classes], "relu", seed=1)
net = train(net, train_set, TrainConfig(epochs=400, learning_rate=0.05, seed=2))
print("test accuracy:", np.mean(predict(net, test.X) == test.y))

x = test.X[0]
trace = forward_with_activations(net, x)
for l, z in enumerate(trace.hidden, start=1):
    print(f"hidden layer {l}: {len(z)} units, {np.count_nonzero(z)} active")
print("posterior:", np.round(trace.posterior, 3))

c = int(np.argmax(trace.posterior))
g = input_gradient(net, x, c)
h = 1e-5
fd = np.array([(forward_with_activations(net, x + h * e).posterior[c]
                - forward_with_activations(net, x - h * e).posterior[c]) / (2 * h) for e in np.eye(len(x))])
print("max |analytic - finite difference|:", np.abs(g - fd).max())
