"""Conditional law of the sampled rank r given the global rank R.

With n - 1 negatives drawn uniformly (with replacement) from the N - 1
non-target items, each draw outranks the target with probability
theta_R = (R - 1) / (N - 1), so r - 1 ~ Binomial(n - 1, theta_R).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.special import gammaln, xlogy


def success_prob(rank: int, catalog_size: int) -> float:
    if catalog_size < 2:
        raise ValueError(f"catalog_size must be >= 2, got {catalog_size}")
    if not 1 <= rank <= catalog_size:
        raise ValueError(f"rank {rank} outside [1, {catalog_size}]")
    return (rank - 1) / (catalog_size - 1)


def log_likelihood_grid(sampled_ranks, sample_sizes, global_ranks, catalog_size) -> np.ndarray:
    """log P(r | R; n) for broadcastable arrays of r, n and R.

    theta is kept as the ratio (R-1)/(N-1) inside the logs so the edges
    theta = 0 and theta = 1 come out as exact 0 / -inf.
    """
    r = np.asarray(sampled_ranks, dtype=np.float64)
    n = np.asarray(sample_sizes, dtype=np.float64)
    R = np.asarray(global_ranks, dtype=np.float64)
    k = r - 1.0
    m = n - r
    log_denom = np.log(catalog_size - 1.0)
    log_binom = gammaln(n) - gammaln(r) - gammaln(n - r + 1.0)
    return (
        log_binom
        + xlogy(k, R - 1.0)
        + xlogy(m, catalog_size - R)
        - (k + m) * log_denom
    )


def rank_likelihood(r: int, R: int, n: int, N: int) -> float:
    if n < 2:
        raise ValueError(f"sample size must be >= 2, got {n}")
    if not 1 <= r <= n:
        raise ValueError(f"sampled rank {r} outside [1, {n}]")
    success_prob(R, N)
    return float(max(np.exp(log_likelihood_grid(r, n, R, N)), 0.0))


@dataclass(frozen=True)
class ConditionalMatrix:
    """Dense N x n matrix with entry [R-1, r-1] = P(r | R)."""

    entries: np.ndarray

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.float64)
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def catalog_size(self) -> int:
        return self.entries.shape[0]

    @property
    def sample_size(self) -> int:
        return self.entries.shape[1]


def _check_sizes(n, N):
    if N < 2:
        raise ValueError(f"catalog_size must be >= 2, got {N}")
    if n < 2:
        raise ValueError(f"sample size must be >= 2, got {n}")
    if n > N:
        raise ValueError(f"sample size {n} exceeds catalog size {N}")


def conditional_rows(n: int, N: int, start: int, stop: int) -> np.ndarray:
    """Rows R = start+1 .. stop of the conditional matrix."""
    R = np.arange(start + 1, stop + 1, dtype=np.float64)[:, None]
    r = np.arange(1, n + 1, dtype=np.float64)[None, :]
    return np.exp(log_likelihood_grid(r, n, R, N))


def iter_conditional_blocks(n: int, N: int, block_rows: int = 4096) -> Iterator[tuple[int, np.ndarray]]:
    """Stream the conditional matrix in row blocks as (start, rows)."""
    _check_sizes(n, N)
    for start in range(0, N, block_rows):
        stop = min(start + block_rows, N)
        yield start, conditional_rows(n, N, start, stop)


def conditional_matrix(n: int, N: int, exact_mode: bool = False) -> ConditionalMatrix:
    """Build A with A[R-1, r-1] = P(r | R).

    ``exact_mode`` with n == N gives the identity (full information limit).
    """
    _check_sizes(n, N)
    if exact_mode:
        if n != N:
            raise ValueError("exact_mode requires n == N")
        return ConditionalMatrix(np.eye(N))
    return ConditionalMatrix(conditional_rows(n, N, 0, N))
