"""How the entropy gate decides when to stop adding timesteps.

Shows normalized entropy on hand-picked probability vectors, then runs
dynamic inference on a small trained network and prints per-sample exit
traces: confident inputs leave at t=1, ambiguous ones run longer.

Run: python3 demos/02_entropy_exit.py   (~30 s, trains a tiny model)
"""

import numpy as np

from dtsnn import (
    ExitPolicy,
    LayerSpec,
    NetworkSpec,
    TrainConfig,
    build_instance,
    dynamic_infer,
    normalized_entropy,
    softmax,
    synth_dataset,
    train,
)

print("normalized entropy maps uncertainty into [0, 1]:")
for name, pi in [
    ("uniform over 10", np.full(10, 0.1)),
    ("mild preference", softmax(np.array([2.0, 1.0, 0.5, 0.0]))),
    ("confident", np.array([0.97, 0.01, 0.01, 0.01])),
    ("one-hot", np.eye(4)[0]),
]:
    print(f"  {name:>16}: E = {normalized_entropy(pi, len(pi)):.4f}")

print("\ntraining a small network on noisy oriented gratings...")
spec = NetworkSpec(
    input_shape=(1, 14, 14),
    num_classes=4,
    t_max=4,
    layers=(
        LayerSpec("conv", out_channels=8),
        LayerSpec("norm"),
        LayerSpec("lif"),
        LayerSpec("pool", window=2),
        LayerSpec("classifier"),
    ),
)
train_ds = synth_dataset("stripes", 1500, 4, seed=7, image_size=14, noise=1.0)
test_ds = synth_dataset("stripes", 200, 4, seed=8, image_size=14, noise=1.0)
net = build_instance(spec, seed=0)
train(net, train_ds.images, train_ds.labels, test_ds.images, test_ds.labels,
      TrainConfig(epochs=6, batch_size=64, lr0=0.05, t_train=4, seed=0))

policy = ExitPolicy(theta=0.25, t_max=4)
print(f"\ndynamic inference with theta={policy.theta}:")
print(f"{'sample':>6} {'label':>5} {'pred':>4} {'T^':>3}  entropies per step")
shown_late = 0
for i in range(len(test_ds)):
    trace = dynamic_infer(net, test_ds.images[i], policy)
    late = trace.chosen_t > 1
    if i < 8 or (late and shown_late < 4):
        ent = " ".join(f"{e:.3f}" for e in trace.entropies)
        print(f"{i:>6} {test_ds.labels[i]:>5} {trace.prediction:>4} "
              f"{trace.chosen_t:>3}  {ent}")
        shown_late += late
chosen = [dynamic_infer(net, test_ds.images[i], policy).chosen_t
          for i in range(len(test_ds))]
hist = np.bincount(chosen, minlength=5)[1:]
print(f"\nexit histogram over {len(test_ds)} samples (t=1..4): {hist.tolist()}")
print(f"mean timesteps: {np.mean(chosen):.2f} instead of the static 4")
