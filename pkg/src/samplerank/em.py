"""Maximum-likelihood fit of the global rank pmf by EM.

Each user's sampled rank is a draw from the mixture
sum_R pi_R Bin(r - 1; n_u - 1, theta_R), and the users may have different
sample sizes n_u (adaptive sampling).  Users sharing the same (r, n) pair
have identical posteriors, so the E-step runs once per distinct pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import MetricSpec, RankPmf, Samples, as_sample_set, plugin_metric_from_pmf
from .rank_model import log_likelihood_grid

DEFAULT_MAX_ITERS = 500
DEFAULT_TOL = 1e-8


@dataclass(frozen=True)
class EmConfig:
    max_iters: int = DEFAULT_MAX_ITERS
    tol: float = DEFAULT_TOL
    init: RankPmf | None = None  # None means uniform

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.tol > 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")


@dataclass
class EmResult:
    pmf: RankPmf
    log_likelihoods: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


@dataclass(frozen=True)
class GroupedObservations:
    """Distinct (sampled_rank, sample_size) pairs with their user counts,
    sorted by (sample_size, sampled_rank)."""

    sampled_ranks: np.ndarray
    sample_sizes: np.ndarray
    counts: np.ndarray

    @property
    def num_users(self) -> int:
        return int(self.counts.sum())

    def as_dict(self) -> dict[tuple[int, int], int]:
        return {
            (int(r), int(n)): int(c)
            for r, n, c in zip(self.sampled_ranks, self.sample_sizes, self.counts)
        }


def group_observations(samples: Samples) -> GroupedObservations:
    samples = as_sample_set(samples)
    pairs = np.stack([samples.sample_sizes, samples.sampled_ranks], axis=1)
    uniq, counts = np.unique(pairs, axis=0, return_counts=True)
    return GroupedObservations(uniq[:, 1].copy(), uniq[:, 0].copy(), counts.astype(np.int64))


def likelihood_kernels(groups: GroupedObservations, catalog_size: int) -> np.ndarray:
    """G x N matrix of P(r_g | R; n_g) for each distinct pair g."""
    R = np.arange(1, catalog_size + 1, dtype=np.float64)[None, :]
    logk = log_likelihood_grid(
        groups.sampled_ranks[:, None], groups.sample_sizes[:, None], R, catalog_size
    )
    return np.exp(logk)


def _mixture(kernels, pi):
    mix = kernels @ pi
    if np.any(mix <= 0):
        bad = int(np.flatnonzero(mix <= 0)[0])
        raise ValueError(
            f"observation group {bad} has zero likelihood under every rank with positive mass"
        )
    return mix


def em_fit(samples: Samples | GroupedObservations, catalog_size: int,
           cfg: EmConfig | None = None, callback=None) -> EmResult:
    """Run EM from ``cfg.init`` until the L-inf change in pi drops below
    ``cfg.tol`` or ``cfg.max_iters`` updates have been made.

    ``log_likelihoods[t]`` is the observed-data log-likelihood of the t-th
    iterate (t = 0 is the initial pmf).  ``callback(iteration, pi)`` is
    called after every update.
    """
    cfg = cfg or EmConfig()
    if catalog_size < 2:
        raise ValueError(f"catalog_size must be >= 2, got {catalog_size}")
    groups = samples if isinstance(samples, GroupedObservations) else group_observations(samples)
    kernels = likelihood_kernels(groups, catalog_size)
    weights = groups.counts.astype(np.float64)
    total = weights.sum()

    if cfg.init is None:
        pi = np.full(catalog_size, 1.0 / catalog_size)
    else:
        if cfg.init.catalog_size != catalog_size:
            raise ValueError("initial pmf does not match catalog size")
        pi = np.array(cfg.init.probs)

    result = EmResult(RankPmf(pi))
    mix = _mixture(kernels, pi)
    for it in range(1, cfg.max_iters + 1):
        result.log_likelihoods.append(float(weights @ np.log(mix)))
        # posterior rows phi_g(k) = pi_k P(r_g|k) / mix_g; M-step averages them over users
        new_pi = pi * ((weights / mix) @ kernels) / total
        new_pi /= new_pi.sum()
        delta = np.max(np.abs(new_pi - pi))
        pi = new_pi
        mix = _mixture(kernels, pi)
        result.iterations = it
        if callback is not None:
            callback(it, pi)
        if delta < cfg.tol:
            result.converged = True
            break
    result.log_likelihoods.append(float(weights @ np.log(mix)))
    result.pmf = RankPmf(pi)
    return result


def posterior_rows(samples: Samples | GroupedObservations, pmf: RankPmf) -> np.ndarray:
    """Posterior over global ranks for each distinct observation group."""
    groups = samples if isinstance(samples, GroupedObservations) else group_observations(samples)
    joint = likelihood_kernels(groups, pmf.catalog_size) * pmf.probs[None, :]
    return joint / joint.sum(axis=1, keepdims=True)


def mle_estimate(samples: Samples, catalog_size: int, spec: MetricSpec,
                 cfg: EmConfig | None = None) -> float:
    return plugin_metric_from_pmf(em_fit(samples, catalog_size, cfg).pmf, spec)


def adaptive_mle_estimate(samples: Samples, catalog_size: int, spec: MetricSpec,
                          cfg: EmConfig | None = None) -> float:
    """Plug-in estimate from the EM-fitted pmf; sample sizes may differ per user."""
    return mle_estimate(samples, catalog_size, spec, cfg)
