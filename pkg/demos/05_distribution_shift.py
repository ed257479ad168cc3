"""Robust reweighting under distribution shift, in both directions.

Upward shift: deployment concentrates the expensive domain, so a
non-robust router trained to the budget violates it out of distribution;
the cost-side tilt prices instances by a pessimistic estimate and stays
safe. Downward shift: deployment concentrates a cheap domain that is a
poor average-case deal, which the reward-side tilt funds anyway.
"""

from dataclasses import replace

import numpy as np

from racer import (
    PRESET_SCENARIOS,
    RobustConfig,
    TrainConfig,
    evaluate_policy,
    gen_synthetic,
    shift_scenarios,
    train,
)

SEEDS = range(5)
config = TrainConfig(budget=2.0, epochs=150, batch_size=64, primal_lr=5e-3,
                     dual_lr=0.02, seed=0, val_fraction=0.15, init_bias=-2.5)

print("=== upward cost shift (budget C = 2) ===")
train_up, _, ood_high = shift_scenarios(PRESET_SCENARIOS["shift-up"])
print(f"mean reasoning cost: train {train_up.cost[:, 1].mean():.2f} "
      f"-> OOD {ood_high.cost[:, 1].mean():.2f}")
for mode, robust in (("acer", RobustConfig(mode="acer")),
                     ("racer-c", RobustConfig(tau_cost=0.3, mode="racer-c"))):
    costs, accs = [], []
    for seed in SEEDS:
        best = train(train_up, replace(config, seed=seed, robust=robust)).best
        m = evaluate_policy(best.policy, ood_high)
        costs.append(m.realized_cost)
        accs.append(m.accuracy)
    print(f"{mode:>8}: OOD cost {np.mean(costs):.2f} (budget 2.0, "
          f"violations {sum(c > 2.0 for c in costs)}/{len(costs)}), acc {np.mean(accs):.3f}")

print("\n=== downward cost shift (budget C = 2) ===")
train_down, ood_low, _ = shift_scenarios(PRESET_SCENARIOS["shift-down"], n_test=4000)
print(f"mean reasoning cost: train {train_down.cost[:, 1].mean():.2f} "
      f"-> OOD {ood_low.cost[:, 1].mean():.2f}")
for mode, robust in (("acer", RobustConfig(mode="acer")),
                     ("racer-r", RobustConfig(tau_reward=0.3, mode="racer-r"))):
    accs = []
    for seed in SEEDS:
        best = train(train_down, replace(config, seed=seed, robust=robust)).best
        accs.append(evaluate_policy(best.policy, ood_low).accuracy)
    print(f"{mode:>8}: OOD accuracy {np.mean(accs):.4f} (sd {np.std(accs):.4f})")
