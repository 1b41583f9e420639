"""Seeded training runs with a pivot-epoch sampler switch, sampler comparison,
one-step update-efficacy probes and CSV/JSON output.

Every random stream of a run is derived from the run seed and a fixed tag, so
two samplers that share a seed see the same data, the same initial weights and
the same random partitions for every epoch before the pivot.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .assessor import assess, estimate_uncertainty, value_difficulty_scores
from .data import (
    Dataset, LTSpec, NLSpec, gen_longtail, gen_longtail_test, gen_noisy, gen_noisy_test,
    load_csv, split,
)
from .micronet import (
    MicroModel, PerturbationSpec, backward, batch_gradient, ce_loss, forward, init_model,
    predict, sample_losses, sgd_step,
)
from .scheduler import EpochPlan, SamplerKind, build_plan, random_partition

log = logging.getLogger(__name__)

# stream tags for seed derivation
_DATA, _INIT, _PLAN, _ASSESS, _PROBE, _SPLIT = range(6)


def derive_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1, np.uint64)[0])


class TrainingDiverged(FloatingPointError):
    """Raised on a non-finite training loss; ``state`` carries a diagnostic dump."""

    def __init__(self, message, state):
        super().__init__(message)
        self.state = state


@dataclass
class ExperimentConfig:
    dataset: dict = field(default_factory=lambda: {"kind": "longtail"})
    hidden: list = field(default_factory=lambda: [32, 32])
    head: str = "softmax"
    perturbation_layer: int = 0
    eta: float = 0.1
    batch_size: int = 4
    # None means "25% of epochs"; math.inf disables the switch
    pivot_epoch: Optional[float] = None
    epochs: int = 40
    lr_decay_epochs: list = field(default_factory=list)
    lr_decay_factor: float = 0.1
    G: int = 8
    gamma: float = 0.3
    sampler: str = "mombs"
    samplers: list = field(default_factory=list)
    seeds: list = field(default_factory=lambda: [0])
    scl_percentile: float = 70.0
    ohem_factor: int = 2
    ohem_top_fraction: float = 0.25
    probe_batches: int = 0
    write_tables: bool = True
    out: str = "runs/out"

    def __post_init__(self):
        SamplerKind(self.sampler)
        for k in self.samplers:
            SamplerKind(k)
        if not self.seeds:
            raise ValueError("at least one seed required")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch size must be >= 2")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.pivot_epoch is not None and self.pivot_epoch != math.inf and not (
            0 <= self.pivot_epoch <= self.epochs
        ):
            raise ValueError("pivot_epoch must lie in [0, epochs] or be inf")

    @property
    def pivot(self) -> float:
        if self.pivot_epoch is None:
            return int(round(0.25 * self.epochs))
        return self.pivot_epoch

    def lr_at(self, epoch: int) -> float:
        drops = sum(1 for e in self.lr_decay_epochs if epoch >= e)
        return self.eta * self.lr_decay_factor ** drops

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["pivot_epoch"] == math.inf:
            d["pivot_epoch"] = "inf"
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        pe = raw.get("pivot_epoch")
        if isinstance(pe, str):
            raw["pivot_epoch"] = math.inf if pe.lower() in ("inf", "infinity", "none") else float(pe)
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)


def load_config(path) -> ExperimentConfig:
    try:
        import tomllib
    except ModuleNotFoundError:  # python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        return ExperimentConfig.from_dict(tomllib.load(fh))


@dataclass
class EfficacyRecord:
    members: tuple
    l1: float
    l2: float
    dhat1: float
    dhat2: float
    delta_lB: float
    delta_lmin: float

    @property
    def total_loss(self) -> float:
        return self.l1 + self.l2

    @property
    def x_min(self) -> int:
        return self.members[0] if self.l1 <= self.l2 else self.members[1]


@dataclass
class RunResult:
    seed: int
    sampler: str
    metrics: list
    tables: dict
    plans: dict
    efficacy: list
    model: MicroModel
    init_accuracy: float
    config: ExperimentConfig

    @property
    def final_accuracy(self) -> float:
        return self.metrics[-1]["test_acc"] if self.metrics else self.init_accuracy

    @property
    def best(self) -> tuple[float, int]:
        if not self.metrics:
            return self.init_accuracy, -1
        accs = [m["test_acc"] for m in self.metrics]
        k = int(np.argmax(accs))
        return accs[k], k


def make_data(cfg: ExperimentConfig, seed: int) -> tuple[Dataset, Dataset]:
    spec = dict(cfg.dataset)
    kind = spec.pop("kind", "longtail")
    if kind == "longtail":
        s = LTSpec(**spec, seed=seed) if "seed" not in spec else LTSpec(**spec)
        return gen_longtail(s), gen_longtail_test(s)
    if kind == "noisy":
        s = NLSpec(**spec, seed=seed) if "seed" not in spec else NLSpec(**spec)
        return gen_noisy(s), gen_noisy_test(s)
    if kind == "csv":
        ds = load_csv(spec["path"], spec.get("num_classes"))
        return split(ds, spec.get("test_fraction", 0.2), derive_seed(seed, _SPLIT))
    raise ValueError(f"unknown dataset kind {kind!r}")


def evaluate(model: MicroModel, test: Dataset) -> float:
    """Top-1 accuracy; argmax ties go to the smallest class index."""
    if len(test) == 0:
        raise ValueError("empty test set")
    return float(np.mean(predict(model, test.X) == test.y))


def _perturbation(cfg, seed, epoch):
    return PerturbationSpec(cfg.G, cfg.gamma, derive_seed(seed, _ASSESS, epoch))


def _plan_for_epoch(kind, epoch, pivot, n, cfg, seed, table):
    plan_seed = derive_seed(seed, _PLAN, epoch)
    if kind is SamplerKind.RANDOM or epoch < pivot:
        return random_partition(n, cfg.batch_size, plan_seed)
    return build_plan(
        kind, n, cfg.batch_size, plan_seed, d=table.d, losses=table.losses,
        scl_percentile=cfg.scl_percentile, ohem_factor=cfg.ohem_factor,
        ohem_top_fraction=cfg.ohem_top_fraction,
    )


def train_epoch(model: MicroModel, train: Dataset, plan: EpochPlan, eta: float):
    """SGD through the plan; returns the new model and the mean per-sample step loss."""
    weights = plan.sample_weights
    total, count = 0.0, 0
    for b in plan.batches:
        idx = np.asarray(b.members)
        Xb, yb = train.X[idx], train.y[idx]
        trace = forward(model, Xb)
        losses = ce_loss(trace.probs, yb)
        if not np.all(np.isfinite(losses)):
            raise TrainingDiverged("non-finite training loss", {
                "batch": idx.tolist(), "losses": losses.tolist(),
                "weights": [w.tolist() for w in model.weights],
            })
        total += float(losses.sum())
        count += len(idx)
        grads = backward(trace, yb, model, None if weights is None else weights[idx])
        model = sgd_step(model, grads, eta)
    return model, total / max(count, 1)


def run_experiment(cfg: ExperimentConfig, seed: Optional[int] = None, sampler=None) -> RunResult:
    """One seeded training run.

    Epochs before the pivot use random partitions. From the pivot on, every
    epoch boundary reassesses all training samples (undisturbed losses plus
    G-disturbance uncertainty) and builds the configured sampler's plan. The
    assessment is also run before random epochs so that plan variance and
    minibatch-type counts are logged for every epoch; it draws from its own
    random stream and never alters the training trajectory.
    """
    seed = cfg.seeds[0] if seed is None else int(seed)
    kind = SamplerKind(sampler or cfg.sampler)
    train, test = make_data(cfg, seed)
    dims = [train.dim, *cfg.hidden, 1 if cfg.head == "sigmoid" else train.num_classes]
    model = init_model(dims, cfg.head, cfg.perturbation_layer if cfg.hidden else None,
                       derive_seed(seed, _INIT))
    init_acc = evaluate(model, test)
    pivot = cfg.pivot
    n = len(train)
    metrics, tables, plans = [], {}, {}
    for epoch in range(cfg.epochs):
        table = assess(model, train.X, train.y, _perturbation(cfg, seed, epoch), epoch)
        plan = _plan_for_epoch(kind, epoch, pivot, n, cfg, seed, table)
        plan.annotate(d=table.d, quadrants=table.quadrants if cfg.batch_size == 2 else None)
        eta = cfg.lr_at(epoch)
        model, train_loss = train_epoch(model, train, plan, eta)
        acc = evaluate(model, test)
        row = {
            "epoch": epoch,
            "phase": "random" if (kind is SamplerKind.RANDOM or epoch < pivot) else kind.value,
            "lr": eta,
            "train_loss": train_loss,
            "test_acc": acc,
            "plan_variance": plan.variance,
            "mean_loss": float(table.losses.mean()),
            "mean_uncertainty": float(table.uncertainties.mean()),
        }
        row.update({f"mb{k}": v for k, v in plan.mb_histogram().items()})
        metrics.append(row)
        if cfg.write_tables:
            tables[epoch] = table
            plans[epoch] = plan
        log.debug("seed %d %s epoch %d acc %.4f", seed, kind.value, epoch, acc)
    efficacy = []
    if cfg.probe_batches > 0:
        probe_plan = random_partition(n, 2, derive_seed(seed, _PROBE))
        # an odd training set leaves a singleton; only full pairs are probed
        pairs = [b for b in probe_plan.batches if len(b) == 2]
        probe_plan = EpochPlan(pairs[:cfg.probe_batches])
        efficacy = efficacy_probe(model, probe_plan, cfg.lr_at(cfg.epochs), train,
                                  PerturbationSpec(cfg.G, cfg.gamma, derive_seed(seed, _PROBE, 1)))
    return RunResult(seed, kind.value, metrics, tables, plans, efficacy, model, init_acc, cfg)


def efficacy_probe(model: MicroModel, plan: EpochPlan, eta: float, train: Dataset,
                   spec: Optional[PerturbationSpec] = None) -> list[EfficacyRecord]:
    """Loss reduction of each pair after one SGD step taken from the same checkpoint.

    Probe steps never accumulate: every batch starts from ``model``. ``spec``
    supplies the disturbances for the d_hat = loss + uncertainty columns.
    """
    batches = [b for b in plan.batches]
    if any(len(b) != 2 for b in batches):
        raise ValueError("efficacy probe needs batches of exactly two samples")
    if not batches:
        return []
    members = np.array([b.members for b in batches])
    flat = members.ravel()
    pre = sample_losses(model, train.X[flat], train.y[flat]).reshape(-1, 2)
    if spec is not None:
        unc = estimate_uncertainty(model, train.X[flat], spec).reshape(-1, 2)
    else:
        unc = np.zeros_like(pre)
    dhat = value_difficulty_scores(pre, unc)
    records = []
    for k, (i, j) in enumerate(members):
        idx = np.array([i, j])
        stepped = sgd_step(model, batch_gradient(model, train.X[idx], train.y[idx]), eta)
        post = sample_losses(stepped, train.X[idx], train.y[idx])
        l1, l2 = pre[k]
        lo = 0 if l1 <= l2 else 1
        records.append(EfficacyRecord(
            (int(i), int(j)), float(l1), float(l2), float(dhat[k, 0]), float(dhat[k, 1]),
            float(pre[k].mean() - post.mean()), float(pre[k, lo] - post[lo]),
        ))
    return records


@dataclass
class SamplerSummary:
    kind: str
    median: float
    iqr: float
    delta_vs_random: float
    mean_post_pivot_variance: float
    finals: list

    COLUMNS = ("kind", "median", "iqr", "delta_vs_random", "post_pivot_plan_variance", "n_seeds")

    def row(self) -> list:
        return [self.kind, self.median, self.iqr, self.delta_vs_random,
                self.mean_post_pivot_variance, len(self.finals)]


def _iqr(v) -> float:
    q75, q25 = np.percentile(v, [75, 25])
    return float(q75 - q25)


def compare_samplers(cfg: ExperimentConfig, kinds: Optional[Sequence[str]] = None,
                     seeds: Optional[Sequence[int]] = None, runs: Optional[dict] = None):
    """Run every sampler on the shared seeds; summarise final accuracy.

    ``delta_vs_random`` is the median over seeds of (kind - random) final
    accuracy, so each delta is paired on data, init and pre-pivot partitions.
    Returns ``(summaries, runs)`` with ``runs[kind]`` the per-seed results.
    """
    kinds = list(kinds or cfg.samplers or [cfg.sampler])
    if len(set(kinds)) < 1:
        raise ValueError("no sampler kinds given")
    if SamplerKind.RANDOM.value not in kinds:
        kinds.insert(0, SamplerKind.RANDOM.value)
    seeds = list(cfg.seeds if seeds is None else seeds)
    if not seeds:
        raise ValueError("at least one seed required")
    runs = dict(runs or {})
    for kind in kinds:
        if kind in runs:
            if [r.seed for r in runs[kind]] != seeds:
                raise ValueError(f"seed list of {kind!r} does not match")
            continue
        runs[kind] = [run_experiment(cfg, s, kind) for s in seeds]
    base = np.array([r.final_accuracy for r in runs[SamplerKind.RANDOM.value]])
    pivot = cfg.pivot
    summaries = []
    for kind in kinds:
        finals = np.array([r.final_accuracy for r in runs[kind]])
        post = [m["plan_variance"] for r in runs[kind] for m in r.metrics
                if m["epoch"] >= pivot and m["plan_variance"] is not None]
        summaries.append(SamplerSummary(
            kind, float(np.median(finals)), _iqr(finals), float(np.median(finals - base)),
            float(np.mean(post)) if post else float("nan"), finals.tolist(),
        ))
    return summaries, runs


def format_summary(summaries: Sequence[SamplerSummary]) -> str:
    lines = [f"{'kind':<12}{'median':>9}{'iqr':>9}{'delta':>9}{'post-var':>12}{'seeds':>7}"]
    for s in summaries:
        lines.append(f"{s.kind:<12}{s.median:>9.4f}{s.iqr:>9.4f}{s.delta_vs_random:>+9.4f}"
                     f"{s.mean_post_pivot_variance:>12.2f}{len(s.finals):>7d}")
    return "\n".join(lines)


def write_summary_csv(summaries, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SamplerSummary.COLUMNS)
        for s in summaries:
            w.writerow([_fmt(v) for v in s.row()])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


METRIC_COLUMNS = ("epoch", "phase", "lr", "train_loss", "test_acc", "plan_variance",
                  "mean_loss", "mean_uncertainty", *(f"mb{k}" for k in range(1, 11)))
EFFICACY_COLUMNS = ("l1", "l2", "dhat1", "dhat2", "delta_lB", "delta_lmin")


def write_rows(path, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow(["" if r[c] is None else _fmt(r[c]) for c in columns])


def emit_outputs(result: RunResult, directory) -> list[Path]:
    """Write metrics, per-epoch tables and plans, efficacy records, config and manifest.

    Everything except the manifest's timestamp is a deterministic function of
    the run, so reruns overwrite files with identical bytes.
    """
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "metrics.csv"
    write_rows(path, METRIC_COLUMNS, result.metrics)
    written.append(path)
    for epoch, table in sorted(result.tables.items()):
        path = out / f"difficulty_epoch{epoch}.csv"
        table.to_csv(path)
        written.append(path)
    for epoch, plan in sorted(result.plans.items()):
        path = out / f"plan_epoch{epoch}.csv"
        plan.to_csv(path, epoch)
        written.append(path)
    path = out / "efficacy.csv"
    write_rows(path, EFFICACY_COLUMNS, [asdict(r) for r in result.efficacy])
    written.append(path)

    path = out / "config.json"
    path.write_text(json.dumps(result.config.to_dict(), indent=2, sort_keys=True) + "\n")
    written.append(path)
    best_acc, best_epoch = result.best
    path = out / "summary.json"
    path.write_text(json.dumps({
        "seed": result.seed, "sampler": result.sampler,
        "init_accuracy": result.init_accuracy, "final_accuracy": result.final_accuracy,
        "best_accuracy": best_acc, "best_epoch": best_epoch,
    }, indent=2, sort_keys=True) + "\n")
    written.append(path)

    manifest = {
        "seed": result.seed,
        "sampler": result.sampler,
        "version": __version__,
        "files": [p.name for p in written],
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    written.append(path)
    return written
