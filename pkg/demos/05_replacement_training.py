"""Learning which ReLUs to keep: indicators, hysteresis, and the count penalty.

Every activation element carries a binary indicator derived from a trainable
auxiliary parameter.  The task gradient can push an element either way
(replaced elements stay recoverable); the count penalty only pushes down and
only while the model is over budget.  A hysteresis band keeps borderline
elements from flapping as training converges.
"""

import copy

import numpy as np

from arp.data import two_spirals
from arp.nn import build_model
from arp.replace import ReplacementConfig, count_relu, evaluate, train_replace, train_supervised

x, y = two_spirals(1024, noise=0.15, seed=3)
n = int(0.8 * len(x))
train, test = (x[:n], y[:n]), (x[n:], y[n:])

print("pretraining the all-ReLU baseline (2 -> 64 -> 64 -> 2)...")
baseline = build_model("mlp", seed=0)
train_supervised(baseline, *train, epochs=150, lr=1e-3, batch_size=64, seed=0)
base_acc = evaluate(baseline, *test)
print(f"baseline test accuracy: {base_acc:.4f}  (128 ReLU elements)\n")

for budget in (64, 13, 0):
    cfg = ReplacementConfig(relu_budget=budget, epochs=40, seed=0)
    model, plan, hist = train_replace(copy.deepcopy(baseline), train, cfg, eval_data=test)
    acc = hist.epochs[-1]["accuracy"]
    counts = [row["relu_count"] for row in hist.epochs]
    print(f"budget {budget:3d}: final count {plan.relu_count:3d}, "
          f"test acc {acc:.4f} ({(acc - base_acc) * 100:+.2f} pts)")
    print(f"  count trajectory: {counts[::5]}")

print("\nhysteresis threshold sweep (flips in the final quarter of training):")
for t_h in (0.0, 0.003, 0.01):
    cfg = ReplacementConfig(relu_budget=64, epochs=40, seed=0, t_h=t_h)
    model, plan, hist = train_replace(copy.deepcopy(baseline), train, cfg, eval_data=test)
    rows = hist.epochs[:40]
    late_flips = sum(r["flips"] for r in rows[-len(rows) // 4:])
    print(f"  t_h = {t_h:<6} late flips {late_flips:4d}  "
          f"acc {hist.epochs[-1]['accuracy']:.4f}")
print("\nno hysteresis (t_h = 0) keeps flapping near convergence; a small band stabilizes it.")
