"""
Comparing samplers on shared seeds
==================================

Every sampler sees the same seeds, so data, initial weights and the
pre-pivot trajectory match. Differences come only from the plans.
"""

from mombs.harness import ExperimentConfig, compare_samplers, format_summary

cfg = ExperimentConfig(
    dataset={"kind": "noisy", "num_classes": 10, "n_per_class": 50, "noise_rate": 0.4,
             "dim": 8, "separation": 2.0},
    hidden=[32, 32], batch_size=4, epochs=20, seeds=list(range(5)), write_tables=False,
)
summaries, runs = compare_samplers(cfg, ["random", "mombs", "anti_mombs", "ohem", "scl_hard"])
print(format_summary(summaries))

# plan variance after the pivot is the mechanical effect of mirror pairing
for s in summaries:
    print(f"{s.kind:10s} post-pivot plan variance {s.mean_post_pivot_variance:.3f}")
