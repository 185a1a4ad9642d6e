"""Closed-form adjusted-metric estimators for equal-size sampled ranks.

Both estimators learn a vector x over sampled ranks 1..n such that
sum_r P~(r) x_r approximates the global top-K metric.  With A the
conditional matrix P(r|R), D = diag(P(R)) and b the truncated metric over
global ranks:

* MN minimizes  ||sqrt(D)(A x - b)||^2 + (1/M)(x' Lam1 x - ||A x||^2),
  Lam1 = diag(column sums of A), giving
  x = (A'DA - A'A/M + Lam1/M)^-1 A'Db.
* BV minimizes  ||sqrt(D)(A x - b)||^2 + gamma (x' diag(c) x - ||sqrt(D) A x||^2),
  i.e. bias plus gamma times the P(R)-weighted variance, with c = A'P,
  giving x = ((1-gamma) A'DA + gamma diag(c))^-1 A'Db.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .core import (
    AdjustedMetric,
    MetricSpec,
    RankPmf,
    Samples,
    apply_adjusted_metric,
    as_sample_set,
    empirical_sampled_pmf,
    metric_vector,
)
from .rank_model import ConditionalMatrix, conditional_matrix, iter_conditional_blocks

log = logging.getLogger(__name__)

DEFAULT_GAMMA = 0.01
_RIDGE_SCALE = 1e-10


@dataclass(frozen=True)
class LsProblem:
    prior: RankPmf
    cond: ConditionalMatrix
    target: np.ndarray
    user_count: int

    def __post_init__(self):
        target = np.asarray(self.target, dtype=np.float64).reshape(-1)
        N = self.cond.catalog_size
        if self.prior.catalog_size != N or target.size != N:
            raise ValueError(
                f"prior ({self.prior.catalog_size}), target ({target.size}) and "
                f"conditional matrix ({N} rows) disagree on catalog size"
            )
        if self.user_count < 1:
            raise ValueError("user_count must be >= 1")
        object.__setattr__(self, "target", target)


def build_problem(prior: RankPmf, n: int, spec: MetricSpec, user_count: int,
                  exact_mode: bool = False) -> LsProblem:
    N = prior.catalog_size
    return LsProblem(prior, conditional_matrix(n, N, exact_mode), metric_vector(spec, N), user_count)


@dataclass(frozen=True)
class NormalTerms:
    """Sufficient statistics of A for both solvers: A'DA, A'A, column sums
    of A (Lam1 diagonal) and c = A'P."""

    gram_weighted: np.ndarray
    gram: np.ndarray
    col_sums: np.ndarray
    col_weighted: np.ndarray
    weighted_cond: np.ndarray  # D A, for right-hand sides A'D b

    @classmethod
    def from_matrix(cls, prior: RankPmf, cond: np.ndarray) -> "NormalTerms":
        p = prior.probs
        da = cond * p[:, None]
        return cls(cond.T @ da, cond.T @ cond, cond.sum(axis=0), p @ cond, da)

    @classmethod
    def streamed(cls, prior: RankPmf, n: int, block_rows: int = 4096) -> "NormalTerms":
        """Accumulate the terms block by block without holding all of A.

        ``weighted_cond`` is still N x n; it is kept because each target
        needs A'D b.
        """
        p = prior.probs
        N = prior.catalog_size
        gw = np.zeros((n, n))
        g = np.zeros((n, n))
        cs = np.zeros(n)
        da = np.empty((N, n))
        for start, rows in iter_conditional_blocks(n, N, block_rows):
            w = rows * p[start:start + rows.shape[0], None]
            gw += rows.T @ w
            g += rows.T @ rows
            cs += rows.sum(axis=0)
            da[start:start + rows.shape[0]] = w
        return cls(gw, g, cs, da.sum(axis=0), da)

    def rhs(self, target: np.ndarray) -> np.ndarray:
        return self.weighted_cond.T @ target


def _symmetrize(m):
    return 0.5 * (m + m.T)


class LinearSolver:
    """Cholesky factorization of a symmetric positive-definite system,
    reusable across right-hand sides."""

    def __init__(self, matrix: np.ndarray, ridge_fallback: bool = True):
        self.matrix = _symmetrize(np.asarray(matrix, dtype=np.float64))
        self.ridge = 0.0
        try:
            self._factor = linalg.cho_factor(self.matrix, lower=True, check_finite=True)
        except linalg.LinAlgError:
            if not ridge_fallback:
                raise linalg.LinAlgError(self._diagnostics("system is not positive definite"))
            n = self.matrix.shape[0]
            self.ridge = _RIDGE_SCALE * np.trace(self.matrix) / n
            log.warning("normal matrix not positive definite; retrying with ridge %.3g", self.ridge)
            try:
                self._factor = linalg.cho_factor(
                    self.matrix + self.ridge * np.eye(n), lower=True
                )
            except linalg.LinAlgError:
                raise linalg.LinAlgError(
                    self._diagnostics(f"factorization failed even with ridge {self.ridge:.3g}")
                ) from None

    def _diagnostics(self, msg):
        eig = np.linalg.eigvalsh(self.matrix)
        return (
            f"{msg}: size {self.matrix.shape[0]}, eigenvalues in "
            f"[{eig[0]:.3e}, {eig[-1]:.3e}], trace {np.trace(self.matrix):.3e}"
        )

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        x = linalg.cho_solve(self._factor, rhs)
        # one step of iterative refinement against the unregularized matrix
        x += linalg.cho_solve(self._factor, rhs - self.matrix @ x)
        return x


def mn_matrix(terms: NormalTerms, user_count: int) -> np.ndarray:
    return terms.gram_weighted + (np.diag(terms.col_sums) - terms.gram) / user_count


def bv_matrix(terms: NormalTerms, gamma: float) -> np.ndarray:
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    return (1.0 - gamma) * terms.gram_weighted + gamma * np.diag(terms.col_weighted)


class AdjustedMetricSolver:
    """One factorization, many (metric, K) targets.

    ``method`` is "mn" or "bv"; ``gamma`` only matters for BV and
    ``user_count`` only for MN.
    """

    def __init__(self, prior: RankPmf, n: int, method: str = "mn", user_count: int | None = None,
                 gamma: float = DEFAULT_GAMMA, exact_mode: bool = False, terms: NormalTerms | None = None):
        self.method = method.lower()
        self.n = n
        if terms is None:
            if exact_mode:
                terms = NormalTerms.from_matrix(prior, conditional_matrix(n, prior.catalog_size, True).entries)
            else:
                terms = NormalTerms.streamed(prior, n)
        self.terms = terms
        if self.method == "mn":
            if user_count is None or user_count < 1:
                raise ValueError("MN needs the number of test users")
            self._solver = LinearSolver(mn_matrix(terms, user_count))
        elif self.method == "bv":
            system = bv_matrix(terms, gamma)
            if gamma == 0.0 and np.linalg.matrix_rank(system) < n:
                raise linalg.LinAlgError(
                    "BV with gamma=0 is singular: the weighted conditional matrix is rank deficient"
                )
            self._solver = LinearSolver(system, ridge_fallback=False)
        else:
            raise ValueError(f"unknown least-squares method {method!r}")

    def solve(self, target: np.ndarray) -> AdjustedMetric:
        return AdjustedMetric(self._solver.solve(self.terms.rhs(np.asarray(target, dtype=np.float64))))

    def solve_metric(self, spec: MetricSpec) -> AdjustedMetric:
        return self.solve(metric_vector(spec, self.terms.weighted_cond.shape[0]))


def _terms(problem: LsProblem) -> NormalTerms:
    return NormalTerms.from_matrix(problem.prior, problem.cond.entries)


def solve_mn(problem: LsProblem) -> AdjustedMetric:
    terms = _terms(problem)
    solver = LinearSolver(mn_matrix(terms, problem.user_count))
    return AdjustedMetric(solver.solve(terms.rhs(problem.target)))


def solve_bv(problem: LsProblem, gamma: float = DEFAULT_GAMMA) -> AdjustedMetric:
    terms = _terms(problem)
    return AdjustedMetricSolver(
        problem.prior, problem.cond.sample_size, "bv", gamma=gamma, terms=terms
    ).solve(problem.target)


def eval_objective(x: AdjustedMetric | np.ndarray, problem: LsProblem) -> tuple[float, float, float]:
    """MN objective at x as (bias term, variance term, total)."""
    x = np.asarray(getattr(x, "values", x), dtype=np.float64)
    A = problem.cond.entries
    if x.size != A.shape[1]:
        raise ValueError(f"x has length {x.size}, expected {A.shape[1]}")
    ax = A @ x
    resid = ax - problem.target
    l1 = float(problem.prior.probs @ resid**2)
    l2 = float((A.sum(axis=0) @ x**2 - ax @ ax) / problem.user_count)
    return l1, l2, l1 + l2


def objective_gradient(x: np.ndarray, problem: LsProblem) -> np.ndarray:
    terms = _terms(problem)
    return 2.0 * (mn_matrix(terms, problem.user_count) @ x) - 2.0 * terms.rhs(problem.target)


def bv_objective(x: np.ndarray, problem: LsProblem, gamma: float) -> float:
    A = problem.cond.entries
    p = problem.prior.probs
    ax = A @ x
    bias = p @ (ax - problem.target) ** 2
    variance = (p @ A) @ x**2 - p @ ax**2
    return float(bias + gamma * variance)


def bv_gradient(x: np.ndarray, problem: LsProblem, gamma: float) -> np.ndarray:
    terms = _terms(problem)
    return 2.0 * (bv_matrix(terms, gamma) @ x) - 2.0 * terms.rhs(problem.target)


def estimate_with_adjusted(samples: Samples, spec: MetricSpec, prior: RankPmf, method: str = "mn",
                           gamma: float = DEFAULT_GAMMA, exact_mode: bool = False) -> float:
    samples = as_sample_set(samples)
    n = samples.uniform_size
    if n is None:
        raise ValueError(f"{method.upper()} needs equal sample sizes across users; use the EM route")
    p_tilde = empirical_sampled_pmf(samples, n)
    solver = AdjustedMetricSolver(prior, n, method, user_count=len(samples), gamma=gamma,
                                  exact_mode=exact_mode)
    return apply_adjusted_metric(solver.solve_metric(spec), p_tilde)
