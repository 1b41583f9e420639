import csv
import math
from pathlib import Path

import numpy as np
import pytest

from mombs.data import Dataset
from mombs.harness import (
    EFFICACY_COLUMNS,
    ExperimentConfig,
    compare_samplers,
    efficacy_probe,
    emit_outputs,
    evaluate,
    load_config,
    run_experiment,
)
from mombs.micronet import MicroModel, PerturbationSpec, init_model
from mombs.scheduler import EpochPlan, Minibatch, random_partition

SMALL = {"kind": "longtail", "num_classes": 4, "n_max": 40, "imbalance_ratio": 0.1,
         "dim": 4, "n_test_per_class": 20}


def small_cfg(**kw):
    base = dict(dataset=SMALL, hidden=[8, 8], eta=0.1, batch_size=2, epochs=4,
                pivot_epoch=1, seeds=[0])
    base.update(kw)
    return ExperimentConfig(**base)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def tree_bytes(directory):
    return {p.name: p.read_bytes() for p in sorted(Path(directory).iterdir()) if p.name != "manifest.json"}


class TestEvaluate:
    def test_memorizer(self):
        m = MicroModel([3, 3], [np.eye(3) * 50], [np.zeros(3)], head="softmax")
        ds = Dataset(np.eye(3), [0, 1, 2], 3)
        assert evaluate(m, ds) == 1.0

    def test_uniform_model_picks_first_class(self):
        m = MicroModel([2, 4], [np.zeros((4, 2))], [np.zeros(4)], head="softmax")
        y = np.array([0, 0, 1, 2, 3, 3, 3, 1, 2, 0])
        ds = Dataset(np.ones((10, 2)), y, 4)
        assert evaluate(m, ds) == np.mean(y == 0)

    def test_random_guess(self):
        C, n = 10, 10_000
        rng = np.random.default_rng(0)
        # logits are seeded noise: a linear model on random one-dim inputs
        m = MicroModel([C, C], [np.eye(C)], [np.zeros(C)], head="softmax")
        ds = Dataset(rng.normal(size=(n, C)), rng.integers(0, C, size=n), C)
        acc = evaluate(m, ds)
        assert abs(acc - 1 / C) < 3 * math.sqrt(0.1 * 0.9 / n)

    def test_empty(self):
        with pytest.raises(ValueError):
            evaluate(init_model([2, 3]), Dataset(np.zeros((0, 2)), np.zeros(0, int), 3))


class TestProbe:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.ds = Dataset(rng.normal(size=(20, 3)), rng.integers(0, 3, 20), 3)
        self.model = init_model([3, 6, 3], seed=1)
        self.plan = random_partition(20, 2, 0)

    def test_zero_eta(self):
        recs = efficacy_probe(self.model, self.plan, 0.0, self.ds)
        assert len(recs) == 10
        assert all(r.delta_lB == 0 and r.delta_lmin == 0 for r in recs)

    def test_perfect_prediction(self):
        m = MicroModel([3, 3], [np.eye(3) * 1000], [np.zeros(3)], head="softmax")
        ds = Dataset(np.eye(3), [0, 1, 2], 3)
        recs = efficacy_probe(m, EpochPlan([Minibatch((0, 1))]), 0.5, ds)
        assert recs[0].delta_lB == 0.0

    def test_records(self):
        recs = efficacy_probe(self.model, self.plan, 0.1, self.ds, PerturbationSpec(8, 0.3, 2))
        for r, b in zip(recs, self.plan.batches):
            assert r.members == b.members
            assert r.dhat1 >= r.l1 and r.dhat2 >= r.l2
            assert r.x_min == (b.members[0] if r.l1 <= r.l2 else b.members[1])

    def test_non_accumulating(self):
        a = efficacy_probe(self.model, self.plan, 0.1, self.ds)
        b = efficacy_probe(self.model, EpochPlan(self.plan.batches[3:4]), 0.1, self.ds)
        assert a[3] == b[0]

    def test_batch_size(self):
        with pytest.raises(ValueError):
            efficacy_probe(self.model, random_partition(20, 4, 0), 0.1, self.ds)


class TestRun:
    def test_pivot_inf_matches_random(self, tmp_path):
        cfg = small_cfg(pivot_epoch=math.inf, probe_batches=5)
        a = run_experiment(cfg, 3, "random")
        b = run_experiment(cfg, 3, "mombs")
        assert [m["test_acc"] for m in a.metrics] == [m["test_acc"] for m in b.metrics]
        for wa, wb in zip(a.model.weights, b.model.weights):
            assert wa.tobytes() == wb.tobytes()
        emit_outputs(a, tmp_path / "a")
        emit_outputs(b, tmp_path / "b")
        ta, tb = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
        # the sampler name appears in summary.json / config.json; everything else matches
        for name in ta:
            if name not in ("summary.json", "config.json"):
                assert ta[name] == tb[name], name

    def test_pivot_switch(self):
        r = run_experiment(small_cfg(pivot_epoch=2), 0, "mombs")
        assert [m["phase"] for m in r.metrics] == ["random", "random", "mombs", "mombs"]

    def test_zero_epochs(self):
        r = run_experiment(small_cfg(epochs=0, pivot_epoch=0), 0)
        assert r.metrics == [] and r.final_accuracy == r.init_accuracy

    def test_default_pivot(self):
        assert ExperimentConfig(epochs=40).pivot == 10

    def test_mb_counts_sum(self):
        r = run_experiment(small_cfg(), 0, "mombs")
        for m, plan in zip(r.metrics, r.plans.values()):
            n2 = sum(1 for b in plan.batches if len(b) == 2)
            assert sum(m[f"mb{k}"] for k in range(1, 11)) == n2

    def test_post_pivot_variance_below_random(self):
        r = run_experiment(small_cfg(epochs=3, pivot_epoch=1), 0, "mombs")
        for epoch in (1, 2):
            t = r.tables[epoch]
            mv = r.plans[epoch].variance
            for s in range(20):
                rp = random_partition(len(t), 2, s).annotate(d=t.d)
                assert mv <= rp.variance

    @pytest.mark.parametrize("kind", ["anti_mombs", "scl_hard", "scl_linear", "ohem"])
    def test_other_samplers_run(self, kind):
        r = run_experiment(small_cfg(batch_size=4), 0, kind)
        assert len(r.metrics) == 4 and all(np.isfinite(m["train_loss"]) for m in r.metrics)

    def test_noisy_dataset(self):
        cfg = small_cfg(dataset={"kind": "noisy", "num_classes": 3, "n_per_class": 10, "dim": 3,
                                 "n_test_per_class": 10})
        assert len(run_experiment(cfg, 0).metrics) == 4

    def test_csv_dataset(self, tmp_path):
        from mombs.data import LTSpec, gen_longtail, save_csv

        p = tmp_path / "d.csv"
        save_csv(gen_longtail(LTSpec(num_classes=3, n_max=20, imbalance_ratio=0.5, dim=3)), p)
        cfg = small_cfg(dataset={"kind": "csv", "path": str(p), "test_fraction": 0.25})
        assert len(run_experiment(cfg, 0).metrics) == 4

    def test_config_validation(self):
        with pytest.raises(ValueError):
            small_cfg(seeds=[])
        with pytest.raises(ValueError):
            small_cfg(pivot_epoch=10)
        with pytest.raises(ValueError):
            small_cfg(sampler="bogus")

    def test_lr_decay(self):
        cfg = small_cfg(lr_decay_epochs=[2], lr_decay_factor=0.5)
        r = run_experiment(cfg, 0)
        assert [m["lr"] for m in r.metrics] == [0.1, 0.1, 0.05, 0.05]


class TestCompare:
    def test_random_vs_random(self):
        cfg = small_cfg(seeds=[0, 1])
        summaries, _ = compare_samplers(cfg, ["random"])
        assert summaries[0].delta_vs_random == 0.0

    def test_schema_and_variance(self):
        cfg = small_cfg(seeds=[0, 1, 2])
        summaries, runs = compare_samplers(cfg, ["random", "mombs"])
        assert [s.kind for s in summaries] == ["random", "mombs"]
        rnd, mo = summaries
        assert mo.mean_post_pivot_variance < 0.05 * rnd.mean_post_pivot_variance
        assert set(runs) == {"random", "mombs"}

    def test_implicit_random_baseline(self):
        summaries, _ = compare_samplers(small_cfg(seeds=[0]), ["mombs"])
        assert summaries[0].kind == "random"

    def test_mismatched_seeds(self):
        cfg = small_cfg(seeds=[0, 1])
        prior = {"random": [run_experiment(cfg, 5, "random")]}
        with pytest.raises(ValueError):
            compare_samplers(cfg, ["random", "mombs"], runs=prior)


class TestOutputs:
    def test_files_and_schema(self, tmp_path):
        r = run_experiment(small_cfg(probe_batches=6), 0)
        emit_outputs(r, tmp_path)
        names = {p.name for p in tmp_path.iterdir()}
        for k in range(4):
            assert f"difficulty_epoch{k}.csv" in names and f"plan_epoch{k}.csv" in names
        assert {"metrics.csv", "efficacy.csv", "config.json", "manifest.json"} <= names
        assert len(read_csv(tmp_path / "metrics.csv")) == 4
        eff = read_csv(tmp_path / "efficacy.csv")
        assert tuple(eff[0].keys()) == EFFICACY_COLUMNS == ("l1", "l2", "dhat1", "dhat2", "delta_lB", "delta_lmin")
        assert len(eff) == 6

    def test_rerun_identical_bytes(self, tmp_path):
        cfg = small_cfg(probe_batches=4)
        emit_outputs(run_experiment(cfg, 1), tmp_path / "x")
        first = tree_bytes(tmp_path / "x")
        emit_outputs(run_experiment(cfg, 1), tmp_path / "x")
        assert tree_bytes(tmp_path / "x") == first

    def test_csvs_roundtrip(self, tmp_path):
        from mombs.assessor import DifficultyTable

        r = run_experiment(small_cfg(), 0)
        emit_outputs(r, tmp_path)
        back = DifficultyTable.from_csv(tmp_path / "difficulty_epoch2.csv")
        assert np.array_equal(back.losses, r.tables[2].losses)
        plan = EpochPlan.from_csv(tmp_path / "plan_epoch2.csv")
        assert plan.batches == r.plans[2].batches
        rows = read_csv(tmp_path / "metrics.csv")
        assert [float(x["test_acc"]) for x in rows] == [m["test_acc"] for m in r.metrics]


class TestConfigFile:
    def test_toml(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text(
            'sampler = "mombs"\nseeds = [1, 2]\nepochs = 6\npivot_epoch = "inf"\n'
            'hidden = [16]\n[dataset]\nkind = "noisy"\nnoise_rate = 0.4\n'
        )
        cfg = load_config(p)
        assert cfg.pivot == math.inf and cfg.seeds == [1, 2] and cfg.dataset["noise_rate"] == 0.4

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text("bogus = 1\n")
        with pytest.raises(ValueError):
            load_config(p)
