"""
Pairing samples by difficulty
=============================

Mirror pairing puts the easiest sample next to the hardest one, so every
pair has nearly the same difficulty total. Anti pairing does the opposite.
"""

import numpy as np

from mombs.scheduler import (
    anti_mirror_pairing, brute_force_optimal_pairing, mirror_pairing, plan_variance,
    random_partition,
)

# eight samples with integer difficulty scores
d = np.array([3, 14, 0, 9, 7, 12, 1, 10])

for name, plan in [("mirror", mirror_pairing(d, seed=0)),
                   ("anti", anti_mirror_pairing(d, seed=0)),
                   ("random", random_partition(len(d), 2, 0))]:
    print(f"{name:7s}", [b.members for b in plan.batches], "variance", plan_variance(plan, d))

# exhaustive search over all 105 pairings agrees with the closed form
print("brute-force minimum", brute_force_optimal_pairing(d)[1])
print("brute-force maximum", brute_force_optimal_pairing(d, maximize=True)[1])
