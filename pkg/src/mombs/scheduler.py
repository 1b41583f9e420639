"""Epoch plans: how an epoch's sample indices are grouped into minibatches.

Samplers here are pure functions of their inputs and a seed. Difficulty-aware
plans sort samples by rank score ``d`` (ties by index) and then mix high and
low scores in each batch so that per-batch score sums are as even as possible.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .assessor import Quadrant

P, U, W, O = (
    Quadrant.POORLY_LABELED,
    Quadrant.UNDER_REPRESENTED,
    Quadrant.WELL_REPRESENTED,
    Quadrant.OVERFITTED,
)

MB_TYPES = {
    frozenset([W, U]): 1,
    frozenset([P]): 2,
    frozenset([P, O]): 3,
    frozenset([O]): 4,
    frozenset([W]): 5,
    frozenset([U]): 6,
    frozenset([W, P]): 7,
    frozenset([W, O]): 8,
    frozenset([P, U]): 9,
    frozenset([O, U]): 10,
}
POSITIVE_TYPES = frozenset({1, 2, 3, 4})


class SamplerKind(str, Enum):
    RANDOM = "random"
    MOMBS = "mombs"
    ANTI_MOMBS = "anti_mombs"
    SCL_HARD = "scl_hard"
    SCL_LINEAR = "scl_linear"
    OHEM = "ohem"

    def __str__(self):
        return self.value


@dataclass
class Minibatch:
    members: tuple
    d_sum: Optional[int] = None
    mb_type: Optional[int] = None

    def __post_init__(self):
        self.members = tuple(int(i) for i in self.members)

    def __len__(self):
        return len(self.members)

    @property
    def positive(self) -> Optional[bool]:
        return None if self.mb_type is None else self.mb_type in POSITIVE_TYPES


@dataclass
class EpochPlan:
    batches: list
    variance: Optional[float] = None
    # per-sample loss weights (soft curriculum); None means all ones
    sample_weights: Optional[np.ndarray] = field(default=None, repr=False)

    def __len__(self):
        return len(self.batches)

    def indices(self) -> np.ndarray:
        if not self.batches:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([np.asarray(b.members, dtype=np.int64) for b in self.batches])

    def annotate(self, d=None, quadrants=None) -> "EpochPlan":
        """Fill d_sum / mb_type / variance from a difficulty table's columns."""
        if d is not None:
            d = np.asarray(d)
            sums = []
            for b in self.batches:
                b.d_sum = d[list(b.members)].sum().item()
                sums.append(b.d_sum)
            self.variance = _variance(sums)
        if quadrants is not None:
            for b in self.batches:
                b.mb_type = classify_minibatch(b, quadrants) if len(b) == 2 else None
        return self

    def mb_histogram(self) -> dict:
        counts = {k: 0 for k in range(1, 11)}
        for b in self.batches:
            if b.mb_type is not None:
                counts[b.mb_type] += 1
        return counts

    CSV_COLUMNS = ("epoch", "batch_id", "member_indices", "d_sum", "mb_type")

    def to_csv(self, path, epoch: int = 0) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.CSV_COLUMNS)
            for k, b in enumerate(self.batches):
                w.writerow([
                    epoch, k, " ".join(str(i) for i in b.members),
                    "" if b.d_sum is None else b.d_sum,
                    "" if b.mb_type is None else f"MB{b.mb_type}",
                ])

    @classmethod
    def from_csv(cls, path) -> "EpochPlan":
        batches = []
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                batches.append(Minibatch(
                    tuple(int(t) for t in row["member_indices"].split()),
                    int(row["d_sum"]) if row["d_sum"] else None,
                    int(row["mb_type"][2:]) if row["mb_type"] else None,
                ))
        return cls(batches)


def sort_by_difficulty(d) -> np.ndarray:
    """Indices ordered by ascending d, ties by ascending index."""
    return np.argsort(np.asarray(d), kind="stable")


def _shuffled(batches, seed):
    if seed is None:
        return batches
    rng = np.random.default_rng(seed)
    return [batches[i] for i in rng.permutation(len(batches))]


def _finish(batches, d, seed):
    plan = EpochPlan(_shuffled(batches, seed))
    return plan.annotate(d=d)


def _split_middle(order, b):
    """Pull the N mod b middle-difficulty indices out for a final short batch."""
    n = len(order)
    r = n % b
    if r == 0:
        return order, None
    start = (n - r) // 2
    mid = order[start:start + r]
    rest = np.concatenate([order[:start], order[start + r:]])
    return rest, mid


def snake_partition(d, b: int, seed=None) -> EpochPlan:
    """Deal the d-sorted samples boustrophedon-style into N // b batches.

    The sorted order is cut into b strata of N // b samples; even strata are
    dealt to batches 0..q-1, odd strata in reverse, so every batch holds one
    sample per stratum. For b = 2 this is the mirror pairing (rank k with
    rank N-1-k). Leftover middle-d samples form a final short batch. Batch
    order is shuffled by ``seed`` (kept sorted if ``seed`` is None).
    """
    d = np.asarray(d)
    n = len(d)
    if n < 2:
        raise ValueError("need at least two samples")
    if b < 2 or b > n:
        raise ValueError(f"batch size {b} invalid for {n} samples")
    order, leftover = _split_middle(sort_by_difficulty(d), b)
    q = len(order) // b
    strata = order.reshape(b, q)
    strata[1::2] = strata[1::2, ::-1]
    batches = [Minibatch(tuple(strata[:, k])) for k in range(q)]
    if leftover is not None:
        batches.append(Minibatch(tuple(leftover)))
    return _finish(batches, d, seed)


def mirror_pairing(d, seed=None) -> EpochPlan:
    """Pair the k-th easiest with the k-th hardest sample (b = 2)."""
    return snake_partition(d, 2, seed)


def anti_mirror_pairing(d, seed=None) -> EpochPlan:
    """Pair neighbours in the d-ordering (hi+hi, lo+lo); maximises batch-sum variance."""
    return anti_partition(d, 2, seed)


def anti_partition(d, b: int, seed=None) -> EpochPlan:
    """Consecutive runs of b samples in d-order."""
    d = np.asarray(d)
    n = len(d)
    if n < 2:
        raise ValueError("need at least two samples")
    if b < 2 or b > n:
        raise ValueError(f"batch size {b} invalid for {n} samples")
    order, leftover = _split_middle(sort_by_difficulty(d), b)
    batches = _chunk(order, b)
    if leftover is not None:
        batches.append(Minibatch(tuple(leftover)))
    return _finish(batches, d, seed)


def _chunk(order, b):
    return [Minibatch(tuple(order[k:k + b])) for k in range(0, len(order), b)]


def random_partition(n: int, b: int, seed) -> EpochPlan:
    """Uniform shuffle chunked into batches of b; the last batch may be short."""
    if b < 1 or b > n:
        raise ValueError(f"batch size {b} invalid for {n} samples")
    rng = np.random.default_rng(seed)
    return EpochPlan(_chunk(rng.permutation(n), b))


def _perfect_matchings(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for k in range(len(rest)):
        pair = (first, rest[k])
        for tail in _perfect_matchings(rest[:k] + rest[k + 1:]):
            yield [pair] + tail


def all_pairings(n: int):
    if n % 2:
        raise ValueError("perfect matchings need an even count")
    return _perfect_matchings(list(range(n)))


def exact_variance(sums) -> Fraction:
    """Population variance of integer sums as an exact fraction."""
    s = [int(v) for v in sums]
    m = len(s)
    return Fraction(m * sum(v * v for v in s) - sum(s) ** 2, m * m)


def brute_force_optimal_pairing(d, maximize: bool = False):
    """Enumerate every perfect matching; return (plan, variance) at the optimum.

    Variances are compared exactly. Ties keep the first matching found.
    """
    d = [int(v) for v in d]
    n = len(d)
    if n % 2 or n < 2:
        raise ValueError("need an even, positive number of samples")
    if n > 12:
        raise ValueError("brute force limited to N <= 12")
    best, best_var = None, None
    for m in all_pairings(n):
        v = exact_variance(d[i] + d[j] for i, j in m)
        if best is None or (v > best_var if maximize else v < best_var):
            best, best_var = m, v
    plan = EpochPlan([Minibatch(p) for p in best]).annotate(d=np.array(d))
    return plan, float(best_var)


def classify_minibatch(batch, quadrants) -> int:
    """MB type 1..10 of a two-sample batch from its members' quadrants."""
    members = batch.members if isinstance(batch, Minibatch) else tuple(batch)
    if len(members) != 2:
        raise ValueError("minibatch types are defined for b = 2 only")
    key = frozenset(Quadrant(quadrants[i]) for i in members)
    return MB_TYPES[key]


def mb_type_of(q1, q2) -> int:
    return MB_TYPES[frozenset([Quadrant(q1), Quadrant(q2)])]


def scl_weight(loss, lam: float, variant: str = "hard"):
    """Self-paced weight: hard keeps loss < lam, linear ramps 1 - loss/lam down to 0."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    loss = np.asarray(loss, dtype=np.float64)
    if variant == "hard":
        w = (loss < lam).astype(np.float64)
    elif variant == "linear":
        w = np.maximum(0.0, 1.0 - loss / lam)
    else:
        raise ValueError(f"unknown SCL variant {variant!r}")
    return float(w) if w.ndim == 0 else w


def scl_threshold(losses, percentile: float = 70.0) -> float:
    lam = float(np.percentile(losses, percentile))
    # all-zero losses would give lambda = 0
    return max(lam, np.finfo(float).tiny)


def ohem_expand(losses, factor: int = 2, top_fraction: float = 0.25, seed=None) -> np.ndarray:
    """Index multiset where the top_fraction highest-loss samples appear ``factor`` times.

    The number of hard samples is ceil(top_fraction * N); loss ties favour the
    smaller index. The multiset is returned shuffled by ``seed`` (sorted if None).
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if not 0 < top_fraction <= 1:
        raise ValueError("top_fraction must lie in (0, 1]")
    losses = np.asarray(losses, dtype=np.float64)
    n = len(losses)
    k = int(np.ceil(top_fraction * n - 1e-9))
    # descending loss, ascending index among ties
    hard = np.lexsort((np.arange(n), -losses))[:k]
    expanded = np.concatenate([np.arange(n)] + [np.sort(hard)] * (int(factor) - 1))
    if seed is None:
        return np.sort(expanded, kind="stable")
    return np.random.default_rng(seed).permutation(expanded)


def chunk_distinct(multiset, b: int) -> EpochPlan:
    """Chunk a shuffled index multiset into batches of b with distinct members.

    A duplicate inside a batch is swapped with the first element elsewhere in
    the sequence that creates no new duplicate on either side.
    """
    seq = [int(i) for i in multiset]
    n = len(seq)
    batch_of = lambda pos: range(pos - pos % b, min(pos - pos % b + b, n))
    for pos in range(n):
        here = [seq[k] for k in batch_of(pos) if k != pos]
        if seq[pos] not in here:
            continue
        for other in range(n):
            if other in batch_of(pos):
                continue
            there = [seq[k] for k in batch_of(other) if k != other]
            if seq[other] not in here and seq[pos] not in there:
                seq[pos], seq[other] = seq[other], seq[pos]
                break
        else:
            raise ValueError("cannot place duplicates into distinct batches")
    return EpochPlan(_chunk(np.asarray(seq), b))


def ohem_partition(losses, b: int, factor: int = 2, top_fraction: float = 0.25, seed=None) -> EpochPlan:
    return chunk_distinct(ohem_expand(losses, factor, top_fraction, seed), b)


def plan_variance(plan: EpochPlan, d) -> float:
    """Population variance of per-batch d sums; exact for integer d."""
    d = np.asarray(d)
    if not plan.batches:
        return 0.0
    seen = plan.indices()
    if len(seen) and (seen.min() < 0 or seen.max() >= len(d)):
        raise ValueError("plan refers to indices outside d")
    if not np.array_equal(np.unique(seen), np.arange(len(d))):
        raise ValueError("plan does not cover every index of d")
    return _variance([d[list(b.members)].sum().item() for b in plan.batches])


def _variance(sums) -> float:
    if not sums:
        return 0.0
    if all(isinstance(s, (int, np.integer)) for s in sums):
        return float(exact_variance(sums))
    return float(np.var(np.asarray(sums, dtype=np.float64)))


def build_plan(kind, n: int, b: int, seed, d=None, losses=None, *,
               scl_percentile: float = 70.0, ohem_factor: int = 2,
               ohem_top_fraction: float = 0.25) -> EpochPlan:
    """Dispatch to the sampler named by ``kind``.

    Difficulty-aware kinds need ``d``; SCL and OHEM need ``losses``.
    """
    kind = SamplerKind(kind)
    if kind is SamplerKind.RANDOM:
        return random_partition(n, b, seed)
    if kind is SamplerKind.MOMBS:
        return snake_partition(d, b, seed)
    if kind is SamplerKind.ANTI_MOMBS:
        return anti_partition(d, b, seed)
    if kind is SamplerKind.OHEM:
        return ohem_partition(losses, b, ohem_factor, ohem_top_fraction, seed)
    lam = scl_threshold(losses, scl_percentile)
    if kind is SamplerKind.SCL_HARD:
        keep = np.flatnonzero(scl_weight(losses, lam, "hard"))
        rng = np.random.default_rng(seed)
        order = keep[rng.permutation(len(keep))]
        return EpochPlan(_chunk(order, b))
    plan = random_partition(n, b, seed)
    plan.sample_weights = scl_weight(losses, lam, "linear")
    return plan


def batch_sums(plan: EpochPlan, d) -> np.ndarray:
    d = np.asarray(d)
    return np.array([d[list(b.members)].sum() for b in plan.batches])


def same_half_pairs(plan: EpochPlan, d) -> int:
    """Number of 2-sample batches whose members sit in the same half of the d-ordering."""
    order = sort_by_difficulty(d)
    pos = np.empty(len(order), dtype=np.int64)
    pos[order] = np.arange(len(order))
    n = len(order)
    half = n // 2
    bad = 0
    for b in plan.batches:
        if len(b) != 2:
            continue
        i, j = (pos[m] for m in b.members)
        # the unpaired middle sample of odd N belongs to neither half
        if n % 2 and (i == half or j == half):
            continue
        if (i < half) == (j < half):
            bad += 1
    return bad


def covers(plan: EpochPlan, n: int) -> bool:
    idx = plan.indices()
    return len(idx) == n and np.array_equal(np.sort(idx), np.arange(n))


def pairwise_disjoint(batches: Sequence[Minibatch]) -> bool:
    seen = set()
    for b in batches:
        if seen.intersection(b.members) or len(set(b.members)) != len(b.members):
            return False
        seen.update(b.members)
    return True
