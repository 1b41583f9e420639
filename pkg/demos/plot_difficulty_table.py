"""
Loss, uncertainty and the four quadrants
========================================

A small network is scored on a long-tailed set. Each sample gets a loss,
an uncertainty from disturbed forwards, and a quadrant label.
"""

from mombs.assessor import assess
from mombs.data import LTSpec, gen_longtail
from mombs.micronet import PerturbationSpec, init_model

data = gen_longtail(LTSpec(num_classes=5, n_max=60, imbalance_ratio=0.1, dim=4, seed=1))
print("class counts", data.class_counts())

model = init_model([4, 16, 5], seed=1)
table = assess(model, data.X, data.y, PerturbationSpec(G=8, gamma=0.3, rng_seed=1))

# quadrant sizes come from a median split of each rank
print(table.quadrant_counts())
for i in range(5):
    print(table[i])
