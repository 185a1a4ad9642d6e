"""Seeded item-sampling simulation in rank space.

Items never get identities: for a target at global rank R, each of the
uniformly drawn negatives outranks it with probability (R-1)/(N-1), so only
the running count of outranking draws is simulated.  Every user gets its own
generator seeded from (seed, user_index), which makes results independent of
how users are split across workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import RankDataset, SampleSet

DEFAULT_N0 = 100
DEFAULT_NMAX = 3200


@dataclass(frozen=True)
class AdaptiveConfig:
    initial_size: int = DEFAULT_N0
    terminal_size: int = DEFAULT_NMAX

    def __post_init__(self):
        if self.initial_size < 2:
            raise ValueError(f"initial size must be >= 2, got {self.initial_size}")
        ratio, rem = divmod(self.terminal_size, self.initial_size)
        if rem or ratio < 1 or ratio & (ratio - 1):
            raise ValueError(
                f"terminal size {self.terminal_size} is not initial size "
                f"{self.initial_size} times a power of two"
            )

    @property
    def sizes(self) -> list[int]:
        """The doubling schedule n_0, 2 n_0, ..., n_max."""
        out = [self.initial_size]
        while out[-1] < self.terminal_size:
            out.append(out[-1] * 2)
        return out


def user_rng(seed: int, user_index: int) -> np.random.Generator:
    return np.random.default_rng([seed, user_index])


def _outrank_probs(dataset: RankDataset) -> np.ndarray:
    return (dataset.ranks - 1) / (dataset.catalog_size - 1)


def simulate_fixed(dataset: RankDataset, n: int, seed: int) -> SampleSet:
    if n < 2:
        raise ValueError(f"sample size must be >= 2, got {n}")
    theta = _outrank_probs(dataset)
    sampled = np.empty(dataset.num_users, dtype=np.int64)
    for u, p in enumerate(theta):
        sampled[u] = 1 + user_rng(seed, u).binomial(n - 1, p)
    return SampleSet(sampled, np.full(dataset.num_users, n, dtype=np.int64))


def simulate_adaptive(dataset: RankDataset, cfg: AdaptiveConfig, seed: int) -> SampleSet:
    """Doubling schedule: while the target still ranks first and the set is
    below the ceiling, draw as many extra negatives as the current set size."""
    theta = _outrank_probs(dataset)
    sampled = np.empty(dataset.num_users, dtype=np.int64)
    sizes = np.empty(dataset.num_users, dtype=np.int64)
    n_max = cfg.terminal_size
    for u, p in enumerate(theta):
        rng = user_rng(seed, u)
        n = cfg.initial_size
        above = rng.binomial(n - 1, p)
        while above == 0 and n < n_max:
            above += rng.binomial(n, p)
            n *= 2
        sampled[u] = above + 1
        sizes[u] = n
    return SampleSet(sampled, sizes)


@dataclass(frozen=True)
class EfficiencyReport:
    sizes: list[int]
    counts: list[int]
    # None where the cost is undefined (empty bucket, or the terminal size)
    costs: list[float | None]


def efficiency_analysis(samples: SampleSet, cfg: AdaptiveConfig, num_users: int) -> EfficiencyReport:
    """Average number of sampled items spent per user escaping rank 1 at each
    doubling level."""
    sizes = cfg.sizes
    observed = np.asarray(samples.sample_sizes)
    unknown = sorted(set(np.unique(observed).tolist()) - set(sizes))
    if unknown:
        raise ValueError(f"sample sizes {unknown} are not on the schedule {sizes}")
    if len(samples) != num_users:
        raise ValueError(f"got {len(samples)} records for {num_users} users")
    counts = [int(np.count_nonzero(observed == s)) for s in sizes]
    t = len(sizes) - 1
    costs: list[float | None] = []
    remaining = num_users
    for j, (size, m) in enumerate(zip(sizes, counts)):
        if j == 0:
            costs.append(num_users * size / m if m else None)
        elif j == t:
            costs.append(None)
        else:
            costs.append(remaining * (size - sizes[j - 1]) / m if m else None)
        remaining -= m
    return EfficiencyReport(sizes, counts, costs)
