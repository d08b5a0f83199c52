"""Stage-by-stage reverse-engineering attack against a black-box net.

Each stage steps every known query by lam * sign of the substitute's
max-posterior gradient, so the query set doubles. Agreement with the
victim and FGSM transfer are measured on held-out test images.
"""
from adare.dataio import SyntheticSpec, gen_synthetic, split
from adare.netcore import TrainConfig, init_net, train
from adare.reattack import Oracle, REConfig, evaluate_attack, run_re_attack

data = gen_synthetic(SyntheticSpec(spread=0.05, mean_range=(0.45, 0.55), seed=0))
train_set, heldout, test = split(data, (0.6, 0.2, 0.2), seed=0)
victim = train(init_net([data.dim, 16, 8, data.n_classes], "relu", seed=1), train_set,
               TrainConfig(epochs=400, learning_rate=0.05, seed=2))

oracle = Oracle(victim)
cfg = REConfig(lam=0.1, n_stages=4, s0_per_class=10, activation="sigmoid",
               train=TrainConfig(epochs=300, learning_rate=1.0), seed=5)
stages = run_re_attack(oracle, train_set, cfg)
metrics = evaluate_attack(victim, stages, test, eps=0.03)

print("stage  new queries  |S_k|  agreement  FGSM transfer")
for st, (agree, transfer) in zip(stages, metrics):
    print(f"{st.k:5d}  {st.n_new_queries:11d}  {len(st.X):5d}  {agree:9.3f}  {transfer:13.3f}")
print("total oracle queries:", oracle.n_queries)
