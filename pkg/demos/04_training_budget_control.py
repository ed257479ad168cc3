"""Budget control during training: the multiplier adapts to the constraint.

Under a binding budget the dual variable rises and drives the training
cost to the target; with a slack budget it decays to zero and the router
reasons wherever it helps.
"""

from dataclasses import replace

from racer import PRESET_SCENARIOS, RobustConfig, TrainConfig, evaluate_policy, gen_synthetic

scenario = PRESET_SCENARIOS["separable3"]
data = gen_synthetic(scenario)
config = TrainConfig(
    budget=2.0, epochs=120, batch_size=64, primal_lr=2e-3, dual_lr=0.05,
    seed=0, val_fraction=0.15, robust=RobustConfig(tau_reward=1.0, mode="racer"),
)

from racer import train  # noqa: E402

for budget in (2.0, 10.0):
    result = train(data, replace(config, budget=budget))
    label = "binding" if budget < 5 else "slack"
    print(f"\nbudget C = {budget} ({label})")
    print(f"{'epoch':>6}{'train cost':>12}{'lambda':>10}{'val acc':>10}")
    for rec in result.history[::20]:
        print(f"{rec.epoch:>6}{rec.train_cost:>12.3f}{rec.lam:>10.4f}{rec.val_accuracy:>10.4f}")
    best = result.best
    print(f"selected checkpoint: epoch {best.epoch}, val acc {best.metrics.accuracy:.4f}, "
          f"val cost {best.metrics.realized_cost:.3f}")
    metrics = evaluate_policy(best.policy, data)
    print(f"on the full split: acc {metrics.accuracy:.4f} cost {metrics.realized_cost:.3f} "
          f"reasoning {metrics.reasoning_fraction:.3f}")
