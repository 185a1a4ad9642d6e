"""Domain types and top-K metric computation over 1-based ranks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence, Union

import numpy as np

FAMILIES = ("recall", "ndcg", "ap")

_PMF_TOL = 1e-9


@dataclass(frozen=True)
class MetricSpec:
    family: str
    cutoff: int

    def __post_init__(self):
        family = self.family.lower()
        if family not in FAMILIES:
            raise ValueError(f"unknown metric family {self.family!r}; expected one of {FAMILIES}")
        if self.cutoff < 1:
            raise ValueError(f"cutoff must be >= 1, got {self.cutoff}")
        object.__setattr__(self, "family", family)

    def __str__(self):
        return f"{self.family}@{self.cutoff}"


@dataclass(frozen=True)
class RankDataset:
    """Ground-truth global ranks R_u of each test user's target item."""

    catalog_size: int
    ranks: np.ndarray

    def __post_init__(self):
        ranks = np.asarray(self.ranks, dtype=np.int64).reshape(-1)
        if self.catalog_size < 2:
            raise ValueError(f"catalog_size must be >= 2, got {self.catalog_size}")
        if ranks.size < 1:
            raise ValueError("dataset needs at least one user")
        if ranks.min() < 1 or ranks.max() > self.catalog_size:
            raise ValueError(f"ranks must lie in [1, {self.catalog_size}]")
        ranks.setflags(write=False)
        object.__setattr__(self, "ranks", ranks)

    @property
    def num_users(self) -> int:
        return int(self.ranks.size)

    def empirical_pmf(self) -> "RankPmf":
        counts = np.bincount(self.ranks, minlength=self.catalog_size + 1)[1:]
        return RankPmf(counts / self.num_users)


@dataclass(frozen=True)
class SampleRecord:
    user_index: int
    sampled_rank: int
    sample_size: int

    def __post_init__(self):
        if self.sample_size < 2:
            raise ValueError(f"sample_size must be >= 2, got {self.sample_size}")
        if not 1 <= self.sampled_rank <= self.sample_size:
            raise ValueError(
                f"sampled_rank {self.sampled_rank} outside [1, {self.sample_size}]"
            )


@dataclass(frozen=True)
class SampleSet:
    """Columnar storage for per-user sampled ranks r_u and sample sizes n_u.

    Iterating yields :class:`SampleRecord` objects; the arrays are what the
    estimators consume.
    """

    sampled_ranks: np.ndarray
    sample_sizes: np.ndarray
    user_indices: np.ndarray = field(default=None)

    def __post_init__(self):
        r = np.asarray(self.sampled_ranks, dtype=np.int64).reshape(-1)
        n = np.asarray(self.sample_sizes, dtype=np.int64).reshape(-1)
        if r.shape != n.shape:
            raise ValueError("sampled_ranks and sample_sizes differ in length")
        if r.size == 0:
            raise ValueError("sample set is empty")
        if n.min() < 2:
            raise ValueError("every sample_size must be >= 2")
        if r.min() < 1 or np.any(r > n):
            raise ValueError("every sampled_rank must satisfy 1 <= r <= n")
        users = (
            np.arange(r.size, dtype=np.int64)
            if self.user_indices is None
            else np.asarray(self.user_indices, dtype=np.int64).reshape(-1)
        )
        if users.shape != r.shape:
            raise ValueError("user_indices length mismatch")
        for a in (r, n, users):
            a.setflags(write=False)
        object.__setattr__(self, "sampled_ranks", r)
        object.__setattr__(self, "sample_sizes", n)
        object.__setattr__(self, "user_indices", users)

    def __len__(self):
        return int(self.sampled_ranks.size)

    def __iter__(self) -> Iterator[SampleRecord]:
        for u, r, n in zip(self.user_indices, self.sampled_ranks, self.sample_sizes):
            yield SampleRecord(int(u), int(r), int(n))

    @property
    def uniform_size(self) -> int | None:
        """The common sample size, or None when sizes are mixed."""
        n = self.sample_sizes
        return int(n[0]) if np.all(n == n[0]) else None

    @classmethod
    def from_records(cls, records: Iterable[SampleRecord]) -> "SampleSet":
        records = list(records)
        return cls(
            np.array([rec.sampled_rank for rec in records], dtype=np.int64),
            np.array([rec.sample_size for rec in records], dtype=np.int64),
            np.array([rec.user_index for rec in records], dtype=np.int64),
        )


Samples = Union[SampleSet, Sequence[SampleRecord]]


def as_sample_set(samples: Samples) -> SampleSet:
    if isinstance(samples, SampleSet):
        return samples
    return SampleSet.from_records(samples)


def _check_pmf(probs, what):
    probs = np.asarray(probs, dtype=np.float64).reshape(-1)
    if probs.size == 0:
        raise ValueError(f"{what} is empty")
    if not np.all(np.isfinite(probs)) or probs.min() < 0:
        raise ValueError(f"{what} has negative or non-finite entries")
    if abs(probs.sum() - 1.0) > _PMF_TOL:
        raise ValueError(f"{what} sums to {probs.sum()!r}, not 1")
    probs.setflags(write=False)
    return probs


@dataclass(frozen=True)
class RankPmf:
    """Probability over global ranks; ``probs[R - 1]`` is P(R)."""

    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _check_pmf(self.probs, "rank pmf"))

    @property
    def catalog_size(self) -> int:
        return int(self.probs.size)

    @classmethod
    def uniform(cls, catalog_size: int) -> "RankPmf":
        return cls(np.full(catalog_size, 1.0 / catalog_size))


@dataclass(frozen=True)
class SampledPmf:
    """Empirical distribution of sampled ranks; ``probs[r - 1]`` is P~(r)."""

    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _check_pmf(self.probs, "sampled pmf"))


@dataclass(frozen=True)
class AdjustedMetric:
    """Learned per-sampled-rank scores, ``values[r - 1]`` for r = 1..n."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(values)):
            raise ValueError("adjusted metric has non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def sample_size(self) -> int:
        return int(self.values.size)


def metric_value(spec: MetricSpec, rank: int) -> float:
    if rank < 1:
        raise ValueError(f"rank must be >= 1, got {rank}")
    if rank > spec.cutoff:
        return 0.0
    if spec.family == "recall":
        return 1.0
    if spec.family == "ndcg":
        return 1.0 / np.log2(rank + 1.0)
    return 1.0 / rank


def metric_vector(spec: MetricSpec, length: int) -> np.ndarray:
    """Truncated metric values M(1..length) as a float vector."""
    ranks = np.arange(1, length + 1, dtype=np.float64)
    if spec.family == "recall":
        values = np.ones(length)
    elif spec.family == "ndcg":
        values = 1.0 / np.log2(ranks + 1.0)
    else:
        values = 1.0 / ranks
    values[spec.cutoff:] = 0.0
    return values


def _mean_metric(ranks: np.ndarray, spec: MetricSpec) -> float:
    hit = ranks[ranks <= spec.cutoff]
    if hit.size == 0:
        return 0.0
    table = metric_vector(spec, spec.cutoff)
    return float(table[hit - 1].sum() / ranks.size)


def global_metric(dataset: RankDataset, spec: MetricSpec) -> float:
    return _mean_metric(dataset.ranks, spec)


def naive_sampled_metric(samples: Samples, spec: MetricSpec) -> float:
    """Top-K metric computed directly on sampled ranks (biased for K < n)."""
    return _mean_metric(as_sample_set(samples).sampled_ranks, spec)


def empirical_sampled_pmf(samples: Samples, n: int) -> SampledPmf:
    samples = as_sample_set(samples)
    if np.any(samples.sample_sizes != n):
        raise ValueError(
            "least-squares estimators need every user sampled at the same size "
            f"n={n}; use the EM route for mixed sample sizes"
        )
    counts = np.bincount(samples.sampled_ranks, minlength=n + 1)[1:]
    return SampledPmf(counts / len(samples))


def plugin_metric_from_pmf(pmf: RankPmf, spec: MetricSpec) -> float:
    k = min(spec.cutoff, pmf.catalog_size)
    return float(pmf.probs[:k] @ metric_vector(spec, k))


def apply_adjusted_metric(adj: AdjustedMetric, p_tilde: SampledPmf) -> float:
    if adj.values.size != p_tilde.probs.size:
        raise ValueError(
            f"adjusted metric has length {adj.values.size} but sampled pmf has {p_tilde.probs.size}"
        )
    return float(p_tilde.probs @ adj.values)
