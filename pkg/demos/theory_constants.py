"""How the guarantee constants move with the weight for a fixed prior angle."""

from priormc.theory import (PriorQuality, completion_probability_bound, constants,
                            optimal_weight, rip_threshold)

theta = 0.2
best = optimal_weight(theta)
print(f"theta={theta}: C4-optimal weight {best.value:.4f}")
print("    w      C1     C2     C3     C4     C5   rip-threshold")
for w in (0.05, 0.1, best.value, 0.5, 1.0):
    c = constants(PriorQuality(theta, theta, w, w))
    print(f"{w:6.3f} " + " ".join(f"{x:6.3f}" for x in c.as_tuple())
          + f"   {rip_threshold(c):7.4f}")

# sampling-rate requirement at the optimal weight versus no prior
n, r = 1000, 5
for w in (best.value, 1.0):
    b = completion_probability_bound(PriorQuality(theta, theta, w, w), 1.0, 1.0, r, n)
    print(f"w={w:.3f}: p >= {b.unclamped:.4f} (times the universal constant)")
