"""Per-sample difficulty: loss, disturbance-based uncertainty, rank scores, quadrants."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .micronet import (
    MicroModel,
    PerturbationSpec,
    draw_disturbance,
    predict_proba,
    sample_losses,
)


class Quadrant(str, Enum):
    POORLY_LABELED = "s_p"  # high loss, low uncertainty
    UNDER_REPRESENTED = "s_u"  # high loss, high uncertainty
    WELL_REPRESENTED = "s_w"  # low loss, low uncertainty
    OVERFITTED = "s_o"  # low loss, high uncertainty

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class SampleStats:
    index: int
    loss: float
    uncertainty: float
    rank_l: int
    rank_u: int
    d: int
    d_hat: float
    quadrant: Quadrant


@dataclass
class DifficultyTable:
    """Column-oriented difficulty annotations for one epoch, indexed by sample id."""

    epoch: int
    losses: np.ndarray
    uncertainties: np.ndarray
    rank_l: np.ndarray
    rank_u: np.ndarray
    d: np.ndarray
    d_hat: np.ndarray
    quadrants: list

    def __len__(self):
        return len(self.losses)

    def __getitem__(self, i) -> SampleStats:
        return SampleStats(
            int(i),
            float(self.losses[i]),
            float(self.uncertainties[i]),
            int(self.rank_l[i]),
            int(self.rank_u[i]),
            int(self.d[i]),
            float(self.d_hat[i]),
            self.quadrants[i],
        )

    @property
    def stats(self) -> list[SampleStats]:
        return [self[i] for i in range(len(self))]

    def quadrant_counts(self) -> dict:
        counts = {q: 0 for q in Quadrant}
        for q in self.quadrants:
            counts[q] += 1
        return counts

    CSV_COLUMNS = ("index", "loss", "uncertainty", "rank_l", "rank_u", "d", "quadrant")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.CSV_COLUMNS)
            for i in range(len(self)):
                w.writerow([
                    i, repr(float(self.losses[i])), repr(float(self.uncertainties[i])),
                    int(self.rank_l[i]), int(self.rank_u[i]), int(self.d[i]),
                    self.quadrants[i].value,
                ])

    @classmethod
    def from_csv(cls, path, epoch: int = 0) -> "DifficultyTable":
        with open(Path(path), newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        rows.sort(key=lambda r: int(r["index"]))
        if [int(r["index"]) for r in rows] != list(range(len(rows))):
            raise ValueError("difficulty table indices are not contiguous")
        losses = np.array([float(r["loss"]) for r in rows])
        unc = np.array([float(r["uncertainty"]) for r in rows])
        return cls(
            epoch=epoch,
            losses=losses,
            uncertainties=unc,
            rank_l=np.array([int(r["rank_l"]) for r in rows]),
            rank_u=np.array([int(r["rank_u"]) for r in rows]),
            d=np.array([int(r["d"]) for r in rows]),
            d_hat=losses + unc,
            quadrants=[Quadrant(r["quadrant"]) for r in rows],
        )


def entropy(p, axis=-1) -> np.ndarray | float:
    """Shannon entropy in nats with 0 ln 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0):
        raise ValueError("negative probability")
    if np.any(np.abs(p.sum(axis=axis) - 1.0) > 1e-9):
        raise ValueError("probabilities do not sum to 1")
    terms = np.zeros_like(p)
    nz = p > 0
    terms[nz] = p[nz] * np.log(p[nz])
    h = -terms.sum(axis=axis)
    # rounding can push a one-hot entropy to -0.0
    h = np.maximum(h, 0.0)
    return float(h) if np.ndim(h) == 0 else h


def mean_disturbed_prediction(model: MicroModel, X, spec: PerturbationSpec) -> np.ndarray:
    """Average class probabilities over the G disturbed forwards.

    Draw g uses the same t^g for every sample, so the G passes behave like G
    perturbed copies of the network. With gamma = 0 (or no hidden feature map)
    the undisturbed prediction is returned as is.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if spec.gamma == 0 or model.perturbation_layer < 0:
        return predict_proba(model, X)
    total = None
    for g in range(spec.G):
        t = draw_disturbance((model.feature_dim,), spec, g)
        p = predict_proba(model, X, t)
        total = p if total is None else total + p
    total = total / spec.G
    # averaging G simplex vectors drifts by a few ulp
    return total / total.sum(axis=-1, keepdims=True)


def estimate_uncertainty(model: MicroModel, x, spec: PerturbationSpec):
    """Entropy of the mean prediction under G feature-map disturbances.

    Accepts one sample (returns a float) or a batch (returns a vector).
    """
    single = np.ndim(x) == 1
    probs = mean_disturbed_prediction(model, x, spec)
    u = entropy(probs)
    u = np.minimum(u, math.log(probs.shape[-1]))
    return float(u[0]) if single else u


def compute_sample_losses(model: MicroModel, X, y) -> np.ndarray:
    """Undisturbed CE loss of every sample, in index order."""
    X = np.asarray(X)
    if len(X) == 0:
        raise ValueError("empty dataset")
    return sample_losses(model, X, y)


def rank_ascending(values) -> np.ndarray:
    """Rank index per entry: smallest value gets 0, ties go to the smaller index."""
    v = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite values cannot be ranked")
    order = np.argsort(v, kind="stable")
    ranks = np.empty(len(v), dtype=np.int64)
    ranks[order] = np.arange(len(v))
    return ranks


def _is_permutation(r) -> bool:
    r = np.asarray(r)
    return r.ndim == 1 and np.array_equal(np.sort(r), np.arange(len(r)))


def difficulty_rank_scores(loss_ranks, uncert_ranks) -> np.ndarray:
    if not (_is_permutation(loss_ranks) and _is_permutation(uncert_ranks)):
        raise ValueError("rank vectors must be permutations of 0..N-1")
    if len(loss_ranks) != len(uncert_ranks):
        raise ValueError("rank vectors differ in length")
    return np.asarray(loss_ranks, dtype=np.int64) + np.asarray(uncert_ranks, dtype=np.int64)


def value_difficulty_scores(losses, uncertainties) -> np.ndarray:
    """d_hat = loss + uncertainty. Only the efficacy analysis uses this."""
    l = np.asarray(losses, dtype=np.float64)
    u = np.asarray(uncertainties, dtype=np.float64)
    if l.shape != u.shape:
        raise ValueError("losses and uncertainties differ in length")
    return l + u


def categorize_sample(rank_l: int, rank_u: int, n: int) -> Quadrant:
    """Median split: a rank >= ceil(n/2) counts as high."""
    cut = (n + 1) // 2
    high_l = rank_l >= cut
    high_u = rank_u >= cut
    if high_l:
        return Quadrant.UNDER_REPRESENTED if high_u else Quadrant.POORLY_LABELED
    return Quadrant.OVERFITTED if high_u else Quadrant.WELL_REPRESENTED


def build_table(losses, uncertainties, epoch: int = 0) -> DifficultyTable:
    losses = np.asarray(losses, dtype=np.float64)
    uncertainties = np.asarray(uncertainties, dtype=np.float64)
    rl = rank_ascending(losses)
    ru = rank_ascending(uncertainties)
    n = len(losses)
    return DifficultyTable(
        epoch=epoch,
        losses=losses,
        uncertainties=uncertainties,
        rank_l=rl,
        rank_u=ru,
        d=difficulty_rank_scores(rl, ru),
        d_hat=value_difficulty_scores(losses, uncertainties),
        quadrants=[categorize_sample(a, b, n) for a, b in zip(rl, ru)],
    )


def assess(model: MicroModel, X, y, spec: PerturbationSpec, epoch: int = 0, loss_fn=None) -> DifficultyTable:
    """Full assessment pass: losses, uncertainties, ranks, scores and quadrants.

    ``loss_fn(model, X, y) -> per-sample losses`` replaces the default CE loss
    as the difficulty loss.
    """
    losses = (loss_fn or compute_sample_losses)(model, X, y)
    unc = estimate_uncertainty(model, np.atleast_2d(X), spec)
    return build_table(losses, unc, epoch)
