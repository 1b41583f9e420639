"""
One-step update efficacy
========================

Train with random minibatches, freeze the model, then take a single SGD
step on many pairs and record how much the pair loss drops.
"""

import math

import numpy as np

from mombs.harness import ExperimentConfig, run_experiment

cfg = ExperimentConfig(
    dataset={"kind": "longtail", "num_classes": 4, "n_max": 150, "imbalance_ratio": 1.0,
             "dim": 4, "separation": 2.0, "n_test_per_class": 50},
    hidden=[16, 16], eta=0.1, batch_size=4, epochs=30, pivot_epoch=math.inf,
    sampler="random", probe_batches=300, write_tables=False,
)
result = run_experiment(cfg, 0)
print("test accuracy", result.final_accuracy)

total = np.array([r.total_loss for r in result.efficacy])
gain = np.array([r.delta_lB for r in result.efficacy])
print("pearson(total loss, loss drop) =", np.corrcoef(total, gain)[0, 1])

# harder pairs move more in one step
order = np.argsort(total)
q = len(order) // 4
print("mean drop, easiest quarter", gain[order[:q]].mean())
print("mean drop, hardest quarter", gain[order[-q:]].mean())
