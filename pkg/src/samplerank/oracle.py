"""Brute-force and Monte Carlo reference computations.

Nothing here imports the numeric kernels of the estimator, EM or rank-model
modules: these routines exist to check them.  They are deliberately slow
and only meant for tiny instances.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np


def dense_solve_oracle(matrix, rhs) -> list[float]:
    """Gaussian elimination with partial pivoting on plain Python floats."""
    a = [[float(v) for v in row] for row in matrix]
    b = [float(v) for v in rhs]
    size = len(a)
    if size > 8 or any(len(row) != size for row in a) or len(b) != size:
        raise ValueError("dense_solve_oracle takes a square system of size <= 8")
    scale = max((abs(v) for row in a for v in row), default=0.0)
    for col in range(size):
        pivot = max(range(col, size), key=lambda i: abs(a[i][col]))
        if abs(a[pivot][col]) <= 1e-14 * max(scale, 1e-300):
            raise ValueError("singular matrix")
        a[col], a[pivot] = a[pivot], a[col]
        b[col], b[pivot] = b[pivot], b[col]
        for i in range(col + 1, size):
            f = a[i][col] / a[col][col]
            if f:
                for j in range(col, size):
                    a[i][j] -= f * a[col][j]
                b[i] -= f * b[col]
    x = [0.0] * size
    for i in reversed(range(size)):
        acc = b[i] - sum(a[i][j] * x[j] for j in range(i + 1, size))
        x[i] = acc / a[i][i]
    return x


def exhaustive_sampling_law(N: int, n: int, R: int) -> list[Fraction]:
    """Exact pmf of the sampled rank r = 1..n by enumerating every ordered
    sequence of n-1 negatives drawn with replacement from the other N-1 items."""
    if N > 6 or n > 4:
        raise ValueError("exhaustive enumeration is limited to N <= 6, n <= 4")
    if not 1 <= R <= N or n < 2:
        raise ValueError("invalid instance")
    others = [g for g in range(1, N + 1) if g != R]
    counts = [0] * n
    for draw in itertools.product(others, repeat=n - 1):
        counts[sum(1 for g in draw if g < R)] += 1
    total = len(others) ** (n - 1)
    return [Fraction(c, total) for c in counts]


def _binom_pmf(k, trials, p):
    # direct product form, independent of the log-gamma kernel
    return math.comb(trials, k) * p**k * (1.0 - p) ** (trials - k)


def simplex_grid(N: int, step: float) -> np.ndarray:
    """All points of the probability simplex in R^N on a grid of ``step``."""
    ticks = int(round(1.0 / step))
    if abs(ticks * step - 1.0) > 1e-9:
        raise ValueError("1/step must be an integer")
    return _compositions(ticks, N).astype(np.float64) / ticks


def _compositions(total: int, parts: int) -> np.ndarray:
    """Every vector of ``parts`` non-negative integers summing to ``total``."""
    if parts == 1:
        return np.array([[total]], dtype=np.int64)
    if parts == 2:
        head = np.arange(total + 1, dtype=np.int64)
        return np.stack([head, total - head], axis=1)
    blocks = []
    for head in range(total + 1):
        rest = _compositions(total - head, parts - 1)
        blocks.append(np.hstack([np.full((rest.shape[0], 1), head, dtype=np.int64), rest]))
    return np.vstack(blocks)


class GridMle(NamedTuple):
    pmf: np.ndarray
    log_likelihood: float
    near_optimal: np.ndarray  # grid points whose log-likelihood ties the max


def simplex_grid_mle(samples: Sequence[tuple[int, int]], N: int, step: float = 0.01,
                     tie_tol: float = 1e-9) -> GridMle:
    """Exhaustive argmax of sum_u log sum_R pi_R P(r_u | R; n_u) over a
    simplex grid.  ``samples`` holds (sampled_rank, sample_size) pairs."""
    if N > 4:
        raise ValueError("grid search is limited to N <= 4")
    if step > 0.01:
        raise ValueError("grid step must be <= 0.01")
    pairs: dict[tuple[int, int], int] = {}
    for r, n in samples:
        pairs[(int(r), int(n))] = pairs.get((int(r), int(n)), 0) + 1
    keys = sorted(pairs)
    weights = np.array([pairs[k] for k in keys], dtype=np.float64)
    lik = np.array(
        [[_binom_pmf(r - 1, n - 1, (R - 1) / (N - 1)) for R in range(1, N + 1)] for r, n in keys]
    )
    grid = simplex_grid(N, step)
    with np.errstate(divide="ignore"):
        scores = np.log(grid @ lik.T) @ weights
    best = float(scores.max())
    idx = int(np.argmax(scores))
    ties = grid[scores >= best - tie_tol * max(1.0, abs(best))]
    return GridMle(grid[idx], best, ties)


class VarianceCheck(NamedTuple):
    analytic: float
    empirical: float
    stderr: float


def weighted_multinomial_variance_check(weights, cell_probs, trials: int, mc_runs: int = 100_000,
                                        seed: int = 0) -> VarianceCheck:
    """Variance of sum_i w_i X_i for X ~ Multinomial(trials, cell_probs):
    closed form against Monte Carlo, with the standard error of the sample
    variance from the fourth central moment."""
    w = np.asarray(weights, dtype=np.float64)
    theta = np.asarray(cell_probs, dtype=np.float64)
    if w.shape != theta.shape:
        raise ValueError("weights and cell_probs differ in length")
    if abs(theta.sum() - 1.0) > 1e-12 or theta.min() < 0:
        raise ValueError("cell_probs must be a pmf")
    if mc_runs < 10_000:
        raise ValueError("mc_runs must be >= 10^4")
    analytic = trials * (float(w**2 @ theta) - float(w @ theta) ** 2)
    draws = np.random.default_rng(seed).multinomial(trials, theta, size=mc_runs) @ w
    dev = draws - draws.mean()
    m2 = float(np.mean(dev**2))
    m4 = float(np.mean(dev**4))
    empirical = m2 * mc_runs / (mc_runs - 1)
    var_of_var = max(m4 - m2**2 * (mc_runs - 3) / (mc_runs - 1), 0.0) / mc_runs
    return VarianceCheck(analytic, empirical, math.sqrt(var_of_var))
