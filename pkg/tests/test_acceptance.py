"""End-to-end acceptance checks, one group per criterion.

Each test carries a ``criterion`` marker; conftest prints a PASS/FAIL line
per criterion after the run.  Run just this file with
``pytest tests/test_acceptance.py -v``.
"""

import math
import os
import time

import numpy as np
import pytest
from scipy import stats

from samplerank.core import MetricSpec, RankDataset, RankPmf, SampleRecord, SampleSet, global_metric
from samplerank.em import EmConfig, em_fit
from samplerank.estimators import (
    LsProblem,
    bv_gradient,
    bv_objective,
    build_problem,
    estimate_with_adjusted,
    eval_objective,
    objective_gradient,
    solve_bv,
    solve_mn,
)
from samplerank.harness import ExperimentConfig, RankSource, SamplerConfig, run_experiment, synth_ranks
from samplerank.oracle import exhaustive_sampling_law, simplex_grid_mle, weighted_multinomial_variance_check
from samplerank.rank_model import rank_likelihood
from samplerank.sampling import simulate_fixed

criterion = pytest.mark.criterion
WORKERS = max(1, min(4, os.cpu_count() or 1))


def rhs_norm(problem):
    A, p, b = problem.cond.entries, problem.prior.probs, problem.target
    return float(np.max(np.abs(A.T @ (p * b))))


def random_problem(rng):
    N = int(rng.integers(5, 101))
    n = int(rng.integers(2, min(N, 20) + 1))
    prior = RankPmf(rng.dirichlet(np.ones(N)))
    spec = MetricSpec(str(rng.choice(["recall", "ndcg", "ap"])), int(rng.integers(1, N + 1)))
    return build_problem(prior, n, spec, int(rng.integers(100, 100_000)))


def central_difference(f, x, h=1e-6):
    return np.array([(f(x + h * e) - f(x - h * e)) / (2 * h) for e in np.eye(x.size)])


# identity limit -----------------------------------------------------------

@criterion(1, "identity limit recovers the global metric")
def test_identity_limit():
    start = time.perf_counter()
    N = 200
    ds = synth_ranks(N, 5000, RankSource("zipf", 1.2), seed=1)
    samples = SampleSet(ds.ranks, np.full(ds.num_users, N))
    prior = ds.empirical_pmf()
    worst = 0.0
    for fam in ("recall", "ndcg", "ap"):
        for k in (1, 5, 10):
            spec = MetricSpec(fam, k)
            problem = build_problem(prior, N, spec, ds.num_users, exact_mode=True)
            np.testing.assert_allclose(solve_mn(problem).values, problem.target, atol=1e-12, rtol=0)
            got = estimate_with_adjusted(samples, spec, prior, "mn", exact_mode=True)
            worst = max(worst, abs(got - global_metric(ds, spec)))
    elapsed = time.perf_counter() - start
    print(f"max |estimate - truth| = {worst:.2e}, {elapsed:.3f}s")
    assert worst <= 1e-9
    assert elapsed < 1.0


# EM monotonicity ----------------------------------------------------------

def random_mixed_samples(rng):
    N = int(rng.integers(5, 501))
    users = int(rng.integers(50, 2001))
    R = rng.choice(N, users, p=rng.dirichlet(np.full(N, 0.5))) + 1
    n = rng.integers(2, 2 * N + 1, users)
    r = 1 + rng.binomial(n - 1, (R - 1) / (N - 1))
    return N, SampleSet(r, n)


@criterion(2, "EM log-likelihood is monotone and iterates are pmfs")
def test_em_monotone_and_normalized():
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    worst_drop, worst_mass = 0.0, 0.0
    for _ in range(50):
        N, samples = random_mixed_samples(rng)
        assert len(np.unique(samples.sample_sizes)) > 1
        iterates = []
        fit = em_fit(samples, N, EmConfig(max_iters=200, tol=1e-300),
                     callback=lambda it, pi: iterates.append(pi.copy()))
        worst_drop = max(worst_drop, float(-np.min(np.diff(fit.log_likelihoods))))
        for pi in iterates:
            assert pi.min() >= 0
            worst_mass = max(worst_mass, abs(pi.sum() - 1))
    elapsed = time.perf_counter() - start
    print(f"largest log-likelihood drop {worst_drop:.2e}, mass error {worst_mass:.2e}, {elapsed:.1f}s")
    assert worst_drop <= 1e-10
    assert worst_mass <= 1e-12
    assert elapsed < 60


# EM vs exhaustive grid ----------------------------------------------------

@criterion(3, "EM matches the simplex-grid MLE")
def test_em_matches_grid():
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    gaps = []
    while len(gaps) < 12:
        N = int(rng.integers(2, 5))
        users = int(rng.integers(30, 200))
        R = rng.choice(N, users, p=rng.dirichlet(np.ones(N))) + 1
        n = rng.integers(N, 9, users)
        r = 1 + rng.binomial(n - 1, (R - 1) / (N - 1))
        pairs = list(zip(r.tolist(), n.tolist()))
        lik = np.array([[rank_likelihood(a, b, nn, N) for b in range(1, N + 1)] for a, nn in set(pairs)])
        if np.linalg.matrix_rank(lik) < N:
            continue  # the MLE is a whole face of the simplex; no unique argmax to compare
        fit = em_fit([SampleRecord(i, a, b) for i, (a, b) in enumerate(pairs)], N,
                     EmConfig(max_iters=200_000, tol=1e-14))
        grid = simplex_grid_mle(pairs, N, step=0.001 if N < 4 else 0.004)
        gaps.append(float(np.max(np.abs(grid.pmf - fit.pmf.probs))))
    elapsed = time.perf_counter() - start
    print(f"L-inf gaps {np.round(gaps, 4).tolist()}, {elapsed:.1f}s")
    assert max(gaps) <= 5e-3
    assert elapsed < 30


# closed-form optimality ---------------------------------------------------

@criterion(4, "closed-form solutions are stationary minimizers")
def test_mn_optimality():
    rng = np.random.default_rng(4)
    for _ in range(20):
        problem = random_problem(rng)
        x = solve_mn(problem).values
        grad = objective_gradient(x, problem)
        assert np.max(np.abs(grad)) < 1e-8 * (1 + rhs_norm(problem))

        def total(v):
            return eval_objective(v, problem)[2]

        y = x + rng.normal(size=x.size)
        np.testing.assert_allclose(central_difference(total, y), objective_gradient(y, problem),
                                   rtol=1e-4, atol=1e-9)
        base = total(x)
        for _ in range(100):
            d = rng.normal(size=x.size)
            assert base <= total(x + 1e-3 * d / np.linalg.norm(d))


@criterion(4, "closed-form solutions are stationary minimizers")
def test_bv_optimality():
    rng = np.random.default_rng(40)
    for _ in range(20):
        problem = random_problem(rng)
        gamma = 0.01
        x = solve_bv(problem, gamma).values
        assert np.max(np.abs(bv_gradient(x, problem, gamma))) < 1e-8 * (1 + rhs_norm(problem))

        def obj(v):
            return bv_objective(v, problem, gamma)

        y = x + rng.normal(size=x.size)
        np.testing.assert_allclose(central_difference(obj, y), bv_gradient(y, problem, gamma),
                                   rtol=1e-4, atol=1e-9)
        base = obj(x)
        for _ in range(100):
            d = rng.normal(size=x.size)
            assert base <= obj(x + 1e-3 * d / np.linalg.norm(d))


# sampling law -------------------------------------------------------------

@criterion(5, "sampling law matches the enumeration and the simulator")
def test_exhaustive_law():
    count = 0
    for N in range(2, 7):
        for n in range(2, 5):
            for R in range(1, N + 1):
                law = exhaustive_sampling_law(N, n, R)
                for r in range(1, n + 1):
                    assert abs(rank_likelihood(r, R, n, N) - float(law[r - 1])) <= 1e-12
                    count += 1
    print(f"{count} (N, n, R, r) cells checked")


@criterion(5, "sampling law matches the enumeration and the simulator")
@pytest.mark.parametrize("R,n,N", [(3, 5, 10), (17, 10, 100), (50, 20, 100), (300, 50, 1000), (999, 8, 1000)])
def test_simulator_chi_square(R, n, N):
    draws = 100_000
    s = simulate_fixed(RankDataset(N, np.full(draws, R)), n, seed=R * 7919 + n)
    observed = np.bincount(s.sampled_ranks, minlength=n + 1)[1:].astype(float)
    expected = draws * np.array([rank_likelihood(r, R, n, N) for r in range(1, n + 1)])
    # zero-probability cells must stay empty; small cells merge into the nearest large one
    assert observed[expected == 0].sum() == 0
    obs, exp = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(observed, expected):
        acc_o += o
        acc_e += e
        if acc_e >= 5:
            obs.append(acc_o)
            exp.append(acc_e)
            acc_o = acc_e = 0.0
    if exp:
        obs[-1] += acc_o
        exp[-1] += acc_e
    if len(exp) == 1:
        assert obs[0] == draws
        return
    pvalue = stats.chisquare(obs, exp).pvalue
    print(f"R={R} n={n} N={N}: p = {pvalue:.4f}")
    assert pvalue > 0.001


# variance identity --------------------------------------------------------

@criterion(6, "weighted multinomial variance identity")
def test_variance_identity():
    rng = np.random.default_rng(6)
    start = time.perf_counter()
    for _ in range(10):
        cells = int(rng.integers(2, 8))
        w = rng.uniform(0, 1, cells)
        theta = rng.dirichlet(np.ones(cells))
        trials = int(rng.integers(10, 2000))
        res = weighted_multinomial_variance_check(w, theta, trials, mc_runs=100_000,
                                                  seed=int(rng.integers(2**31)))
        z = abs(res.empirical - res.analytic) / res.stderr
        print(f"cells={cells} M={trials}: analytic {res.analytic:.5g}, empirical {res.empirical:.5g}, z={z:.2f}")
        assert z <= 4
    elapsed = time.perf_counter() - start
    assert elapsed < 30


# comparative Monte Carlo ---------------------------------------------------

N_SYN, M_SYN, ZIPF = 2000, 20_000, 1.2


@pytest.fixture(scope="module")
def ground_truth():
    return synth_ranks(N_SYN, M_SYN, RankSource("zipf", ZIPF), seed=0)


def mean_error(report, estimator, metric):
    return float(report.relative_errors(estimator, metric)[0].mean())


@criterion(7, "corrected estimators beat the naive sampled metric")
@pytest.mark.slow
def test_comparative_accuracy(ground_truth):
    cfg = ExperimentConfig(
        catalog_size=N_SYN, num_users=M_SYN, rank_source=RankSource("zipf", ZIPF),
        sampler=SamplerConfig("fixed", n=100), estimators=("naive", "mle", "mn_mle", "bv"),
        metrics=("recall",), k_max=50, repeats=30, seed=7,
    )
    start = time.perf_counter()
    report = run_experiment(cfg, ground_truth, workers=WORKERS)
    elapsed = time.perf_counter() - start
    err = {name: mean_error(report, name, "recall") for name in ("naive", "mle", "mn_mle", "bv_uniform")}
    print({k: round(v, 4) for k, v in err.items()}, f"{elapsed:.1f}s")
    assert err["mn_mle"] < 0.5 * err["naive"]
    assert err["mle"] < 0.5 * err["naive"]
    assert elapsed < 300


@pytest.fixture(scope="module")
def adaptive_vs_fixed(ground_truth):
    common = dict(catalog_size=N_SYN, num_users=M_SYN, rank_source=RankSource("zipf", ZIPF),
                  metrics=("ndcg",), k_max=10, repeats=30, seed=8)
    start = time.perf_counter()
    adaptive = run_experiment(ExperimentConfig(
        sampler=SamplerConfig("adaptive", n0=100, nmax=3200), estimators=("adaptive_mle",), **common,
    ), ground_truth, workers=WORKERS)
    mean_size = float(np.mean(adaptive.mean_sample_sizes))
    fixed = run_experiment(ExperimentConfig(
        sampler=SamplerConfig("fixed", n=math.ceil(mean_size)), estimators=("mle",), **common,
    ), ground_truth, workers=WORKERS)
    return adaptive, fixed, mean_size, time.perf_counter() - start


@criterion(8, "adaptive sampling beats fixed sampling at small K")
@pytest.mark.slow
def test_adaptive_more_accurate(adaptive_vs_fixed):
    adaptive, fixed, mean_size, elapsed = adaptive_vs_fixed
    a = mean_error(adaptive, "adaptive_mle", "ndcg")
    f = mean_error(fixed, "mle", "ndcg")
    print(f"adaptive {a:.4f} vs fixed n={math.ceil(mean_size)} {f:.4f}, {elapsed:.1f}s")
    assert a < f
    assert elapsed < 600


@criterion(8, "adaptive sampling beats fixed sampling at small K")
@pytest.mark.slow
def test_adaptive_mean_size_below_quarter_ceiling(adaptive_vs_fixed):
    # Under the Zipf(1.2) ground truth the expected size is about 1146, above
    # 3200 / 4; this test is expected to fail (see README, known deviations).
    mean_size = adaptive_vs_fixed[2]
    print(f"adaptive mean sample size {mean_size:.1f}, bound {3200 / 4}")
    assert mean_size < 3200 / 4


# M dependence -------------------------------------------------------------

@criterion(9, "MN depends on the user count, BV does not")
def test_user_count_dependence():
    rng = np.random.default_rng(9)
    prior = RankPmf(rng.dirichlet(np.ones(80)))
    small = build_problem(prior, 15, MetricSpec("ndcg", 10), 10**3)
    large = LsProblem(small.prior, small.cond, small.target, 10**6)
    diff = float(np.max(np.abs(solve_mn(small).values - solve_mn(large).values)))
    print(f"MN L-inf change {diff:.3e}")
    assert diff > 1e-6
    np.testing.assert_array_equal(solve_bv(small).values, solve_bv(large).values)


# determinism --------------------------------------------------------------

@criterion(10, "serial and parallel runs write identical reports")
def test_determinism(tmp_path):
    cfg = ExperimentConfig(
        catalog_size=500, num_users=3000, rank_source=RankSource("zipf", 1.2),
        sampler=SamplerConfig("fixed", n=50), estimators=("naive", "mle", "bv", "mn_mle"),
        metrics=("recall", "ndcg", "ap"), k_max=20, repeats=6, seed=10,
    )
    run_experiment(cfg).write(tmp_path / "serial")
    run_experiment(cfg).write(tmp_path / "serial_again")
    run_experiment(cfg, workers=2).write(tmp_path / "parallel")
    for name in ("report.csv", "summary.json"):
        ref = (tmp_path / "serial" / name).read_bytes()
        assert (tmp_path / "serial_again" / name).read_bytes() == ref
        assert (tmp_path / "parallel" / name).read_bytes() == ref
