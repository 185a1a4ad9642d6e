import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from samplerank.oracle import exhaustive_sampling_law
from samplerank.rank_model import conditional_matrix, rank_likelihood, success_prob


def test_success_prob_edges():
    assert success_prob(1, 100) == 0.0
    assert success_prob(100, 100) == 1.0
    assert success_prob(2, 3) == 0.5
    with pytest.raises(ValueError):
        success_prob(0, 10)
    with pytest.raises(ValueError):
        success_prob(11, 10)


@pytest.mark.parametrize("n,N", [(2, 3), (10, 50), (100, 2000)])
def test_best_and_worst_are_deltas(n, N):
    assert rank_likelihood(1, 1, n, N) == 1.0
    assert rank_likelihood(n, N, n, N) == 1.0
    assert rank_likelihood(2, 1, n, N) == 0.0
    assert rank_likelihood(1, N, n, N) == 0.0


def test_small_case_matches_enumeration():
    # one negative drawn from the two other items of a 3-item catalog
    assert float(exhaustive_sampling_law(3, 2, 2)[0]) == 0.5
    assert rank_likelihood(1, 2, 2, 3) == pytest.approx(0.5, abs=1e-15)


def test_preconditions():
    with pytest.raises(ValueError):
        rank_likelihood(0, 1, 5, 10)
    with pytest.raises(ValueError):
        rank_likelihood(6, 1, 5, 10)
    with pytest.raises(ValueError):
        rank_likelihood(1, 1, 1, 10)
    with pytest.raises(ValueError):
        conditional_matrix(11, 10)


def test_conditional_matrix_small():
    A = conditional_matrix(2, 3).entries
    np.testing.assert_allclose(A, [[1, 0], [0.5, 0.5], [0, 1]], atol=1e-15)


def test_exact_mode_identity():
    np.testing.assert_array_equal(conditional_matrix(6, 6, exact_mode=True).entries, np.eye(6))
    with pytest.raises(ValueError):
        conditional_matrix(5, 6, exact_mode=True)


@given(st.integers(2, 60), st.data())
def test_row_stochastic_and_mean(N, data):
    n = data.draw(st.integers(2, N))
    A = conditional_matrix(n, N).entries
    assert np.all((A >= 0) & (A <= 1))
    np.testing.assert_allclose(A.sum(axis=1), 1.0, atol=1e-9)
    theta = (np.arange(1, N + 1) - 1) / (N - 1)
    np.testing.assert_allclose(A @ np.arange(n), (n - 1) * theta, atol=1e-8)
    assert np.all(np.diff(A[:, 0]) <= 1e-15)
    assert np.all(np.diff(A[:, -1]) >= -1e-15)


def test_large_instance_rows_sum_to_one():
    A = conditional_matrix(400, 5000).entries
    np.testing.assert_allclose(A.sum(axis=1), 1.0, atol=1e-9)


@given(st.integers(2, 200), st.integers(2, 30), st.data())
def test_log_kernel_matches_direct_product(N, n, data):
    R = data.draw(st.integers(1, N))
    r = data.draw(st.integers(1, n))
    p = (R - 1) / (N - 1)
    direct = math.comb(n - 1, r - 1) * p ** (r - 1) * (1 - p) ** (n - r)
    assert rank_likelihood(r, R, n, N) == pytest.approx(direct, rel=1e-12, abs=1e-300)


def test_sample_size_may_exceed_catalog_for_likelihood():
    # with-replacement model: n > N is valid for the likelihood itself
    total = sum(rank_likelihood(r, 3, 8, 5) for r in range(1, 9))
    assert total == pytest.approx(1.0, abs=1e-12)
