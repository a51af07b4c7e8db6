# # The tiny instance and its exhaustive optimum
#
# Two RUs, two RBs, two mini-slots, one user of each service per RU and three
# power levels. Small enough to enumerate every joint action, so the best
# achievable energy efficiency is known exactly. Enumeration takes ~20 s.

import time

import numpy as np

from green_oran.oracle import (
    action_space_size,
    brute_force_best,
    cross_check,
    default_tiny_instance,
    random_policy,
)

inst = default_tiny_instance()
print("joint actions:", action_space_size(inst.config))

# ## Exhaustive search

t0 = time.perf_counter()
best, ee_star, table = brute_force_best(inst)
print(f"EE* = {ee_star:.3f} bit/J  ({time.perf_counter() - t0:.1f} s)")
for ru, a in enumerate(best):
    print(f"  RU {ru}: eMBB user per RB {a.rb_user.tolist()}, power W {np.round(a.rb_power_w, 3).tolist()}, "
          f"puncture {a.puncture.tolist()}")

# ## Where a random policy lands
#
# The EE table covers every action; a uniform random policy samples from it.

print("EE quantiles over all actions (10/50/90%):", np.round(np.quantile(table, [0.1, 0.5, 0.9])))
stream = random_policy(inst, np.random.default_rng(0))
samples = [cross_check(inst, next(stream))[1] for _ in range(500)]
print(f"random policy mean EE {np.mean(samples):.0f} = {np.mean(samples) / ee_star:.2f} EE*")

# ## Two independent evaluations
#
# The environment and the oracle compute EE with separate code. They agree
# to rounding on every sampled action.

gaps = []
for _ in range(200):
    want, got, diff = cross_check(inst, next(stream))
    gaps.append(diff / max(want, 1e-300))
print("largest relative gap:", max(gaps))
