"""Fit class-conditional activation nulls and score clean vs. random inputs.

Relu layers are modelled in the log domain, one diagonal mixture per
(feature pair, class). The per-image statistic is the max over layers of
the beta-weighted pairwise AW-ADA average.
"""
import numpy as np

from adare.adastat import AdaConfig, estimate_confusion_matrix, layer_statistics
from adare.batchdetect import roc_auc
from adare.dataio import SyntheticSpec, gen_synthetic, split
from adare.netcore import TrainConfig, init_net, train
from adare.nullmodel import EmConfig, fit_null_models

data = gen_synthetic(SyntheticSpec(spread=0.05, mean_range=(0.45, 0.55), seed=0))
train_set, heldout, test = split(data, (0.6, 0.2, 0.2), seed=0)
net = train(init_net([data.dim, 16, 8, data.n_classes], "relu", seed=1), train_set,
            TrainConfig(epochs=400, learning_rate=0.05, seed=2))

nulls = fit_null_models(net, train_set, layers=[1, 2], mode="pairwise", cfg=EmConfig(seed=3))
print({l: len(p) for l, p in nulls.pairs.items()}, "retained pairs per layer;",
      len(nulls.models), "mixtures in total")
ncomp = np.bincount([g.n_components for g in nulls.models.values()])
print("BIC-selected component counts:", {m: int(n) for m, n in enumerate(ncomp) if n})

confusion = estimate_confusion_matrix(net, heldout, alpha=1.0)
print("confusion matrix (rows: predicted, columns: true):")
print(np.round(confusion.matrix, 3))

cfg = AdaConfig(layers=(1, 2))
clean = layer_statistics(net, nulls, confusion, test.X, cfg)
noise = layer_statistics(net, nulls, confusion, np.random.default_rng(4).uniform(size=(200, data.dim)), cfg)
for i, layer in enumerate(cfg.layers):
    print(f"layer {layer}: median clean {np.median(clean[:, i]):.4f}, median noise {np.median(noise[:, i]):.4f}")
print("single-image AUC, noise vs clean:", round(roc_auc(noise.max(1), clean.max(1)), 3))
