"""Quick oracle cross-checks runnable from the command line."""

from __future__ import annotations

import itertools
from typing import Callable, NamedTuple

import numpy as np

from .. import oracle
from ..core import MetricSpec, RankDataset, RankPmf
from ..em import EmConfig, em_fit
from ..estimators import LsProblem, build_problem, eval_objective, objective_gradient, solve_mn
from ..rank_model import conditional_matrix, rank_likelihood
from ..sampling import simulate_fixed


class Check(NamedTuple):
    name: str
    passed: bool
    detail: str


def _sampling_law() -> Check:
    worst = 0.0
    for N in range(2, 7):
        for n in range(2, 5):
            for R in range(1, N + 1):
                exact = oracle.exhaustive_sampling_law(N, n, R)
                for r, p in enumerate(exact, start=1):
                    worst = max(worst, abs(float(p) - rank_likelihood(r, R, n, N)))
    return Check("sampling law = enumeration", worst <= 1e-12, f"max abs diff {worst:.2e}")


def _chi_square() -> Check:
    from scipy.stats import chisquare

    N, n, R, draws = 100, 10, 50, 100_000
    samples = simulate_fixed(RankDataset(N, np.full(draws, R)), n, seed=7)
    observed = np.bincount(samples.sampled_ranks, minlength=n + 1)[1:]
    expected = np.array([rank_likelihood(r, R, n, N) for r in range(1, n + 1)]) * draws
    keep = expected > 0
    p = chisquare(observed[keep], expected[keep] * observed[keep].sum() / expected[keep].sum()).pvalue
    return Check("simulate_fixed chi-square", p > 1e-3, f"p = {p:.3g}")


def _mn_small() -> Check:
    prior = RankPmf.uniform(3)
    problem = build_problem(prior, 2, MetricSpec("recall", 1), user_count=10)
    A = problem.cond.entries
    D = np.diag(prior.probs)
    H = A.T @ D @ A - A.T @ A / 10 + np.diag(A.sum(axis=0)) / 10
    expect = oracle.dense_solve_oracle(H, A.T @ D @ problem.target)
    got = solve_mn(problem).values
    err = float(np.max(np.abs(got - expect)))
    return Check("MN closed form = dense oracle", err < 1e-12, f"max abs diff {err:.2e}")


def _mn_stationary() -> Check:
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(5):
        N = int(rng.integers(5, 60))
        n = int(rng.integers(2, min(N, 15) + 1))
        prior = RankPmf(rng.dirichlet(np.ones(N)))
        problem = LsProblem(prior, conditional_matrix(n, N), rng.random(N), int(rng.integers(10, 10_000)))
        x = solve_mn(problem).values
        g = objective_gradient(x, problem)
        rhs = problem.cond.entries.T @ (prior.probs * problem.target)
        worst = max(worst, float(np.max(np.abs(g))) / (1 + float(np.max(np.abs(rhs)))))
        base = eval_objective(x, problem)[2]
        for delta in itertools.product((-1e-3, 1e-3), repeat=min(n, 3)):
            y = x.copy()
            y[: len(delta)] += delta
            if eval_objective(y, problem)[2] < base - 1e-15:
                return Check("MN stationarity", False, "perturbation decreased the objective")
    return Check("MN stationarity", worst < 1e-8, f"scaled gradient {worst:.2e}")


def _em_grid() -> Check:
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(3):
        N = 3
        truth = rng.dirichlet(np.ones(N) * 2)
        R = rng.choice(N, size=60, p=truth) + 1
        samples = simulate_fixed(RankDataset(N, R), 4, seed=int(rng.integers(1 << 31)))
        fit = em_fit(samples, N, EmConfig(max_iters=100_000, tol=1e-13))
        grid = oracle.simplex_grid_mle(
            list(zip(samples.sampled_ranks, samples.sample_sizes)), N, step=0.001
        )
        worst = max(worst, float(np.max(np.abs(fit.pmf.probs - grid.pmf))))
    return Check("EM = simplex grid MLE", worst < 5e-3, f"max L-inf gap {worst:.2e}")


def _variance() -> Check:
    res = oracle.weighted_multinomial_variance_check([0.3, 0.7, 1.2], [0.2, 0.5, 0.3], 50, 100_000, seed=5)
    z = abs(res.analytic - res.empirical) / res.stderr
    return Check("weighted multinomial variance", z < 4, f"analytic {res.analytic:.4f}, "
                 f"empirical {res.empirical:.4f}, z = {z:.2f}")


CHECKS: list[Callable[[], Check]] = [
    _sampling_law, _chi_square, _mn_small, _mn_stationary, _em_grid, _variance,
]


def run_checks() -> list[Check]:
    return [check() for check in CHECKS]
