"""Exponential tilting: the worst-case distribution over a KL ball.

The adversary reweights sample i proportionally to exp(+-(f_i - s)/tau).
Training uses the fast batch-mean tilt at a chosen temperature tau;
exact_tilt instead takes a KL radius delta and finds the tau* at which the
ball constraint is active, documenting the delta <-> tau correspondence.
"""

import numpy as np

from racer import exact_tilt, kl_divergence, tilt_weights

costs = np.array([0.8, 1.0, 1.3, 2.0, 4.5, 9.0])
print("per-instance expected costs:", costs)

print(f"\n{'tau':>8} | cost-side tilt weights (mean 1)")
for tau in (10.0, 3.0, 1.0, 0.3):
    w = tilt_weights(costs, tau, "worst_high").weights
    print(f"{tau:>8.1f} | " + "  ".join(f"{x:7.3f}" for x in w))
print("smaller tau concentrates mass on the expensive tail;")
print("the tilt-weighted mean cost is the pessimistic estimate training uses:")
for tau in (10.0, 1.0, 0.3):
    w = tilt_weights(costs, tau, "worst_high").weights
    print(f"  tau {tau:>5.1f}: weighted mean {np.mean(w * costs):.3f} vs plain {costs.mean():.3f}")

# the exact counterpart: pick the KL radius instead of the temperature
rho = np.full(costs.size, 1.0 / costs.size)
print(f"\n{'delta':>8}{'tau*':>10}{'KL check':>12}{'worst mean':>12}")
for delta in (0.01, 0.1, 0.5):
    result = exact_tilt(costs, rho, delta, "worst_high")
    tilted = rho * result.weights.weights
    print(f"{delta:>8.2f}{result.tau_star:>10.3f}"
          f"{kl_divergence(tilted, rho):>12.5f}{float(tilted @ costs):>12.3f}")

# degenerate inputs are flagged rather than failed
flat = exact_tilt([2.0, 2.0, 2.0], [1 / 3] * 3, 0.1, "worst_high")
print(f"\nconstant values: status={flat.status!r}, tau*={flat.tau_star}")
big = exact_tilt([0.0, 1.0], [0.5, 0.5], 5.0, "worst_high")
print(f"radius beyond the point mass: status={big.status!r}, weights={big.weights.weights}")
