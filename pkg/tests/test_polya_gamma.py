import numpy as np
import pytest
from scipy.stats import ks_2samp

from trslds.polya_gamma import pg_mean, pg_var, sample_pg, sample_pg_sum_of_gammas


def test_pg_mean_values():
    assert pg_mean(1, 0.0) == pytest.approx(0.25)
    assert pg_mean(4, 0.0) == pytest.approx(1.0)
    assert pg_mean(1, 3.0) == pytest.approx(np.tanh(1.5) / 6.0)
    for c in (0.3, 2.0, 17.0):
        assert pg_mean(1, c) == pytest.approx(pg_mean(1, -c))
    # continuity across the series switch
    assert pg_mean(1, 1e-6) == pytest.approx(pg_mean(1, 1.0001e-6), rel=1e-9)


def test_pg_mean_invalid_b():
    with pytest.raises(ValueError):
        pg_mean(0, 1.0)
    with pytest.raises(ValueError):
        sample_pg(0, 1.0, np.random.default_rng(0))


def test_draws_positive():
    rng = np.random.default_rng(0)
    draws = sample_pg(1, 2.5, rng, size=1000)
    assert (draws > 0).all()


def test_mean_pg_1_0():
    rng = np.random.default_rng(1)
    n = 100_000
    draws = sample_pg(1, 0.0, rng, size=n)
    se = draws.std() / np.sqrt(n)
    assert abs(draws.mean() - 0.25) < 3 * se


def test_mean_pg_1_3_matches_tanh():
    rng = np.random.default_rng(2)
    n = 100_000
    draws = sample_pg(1, 3.0, rng, size=n)
    se = draws.std() / np.sqrt(n)
    assert abs(draws.mean() - np.tanh(1.5) / 6.0) < 3 * se


@pytest.mark.parametrize("c", [0.1, 1.0, 5.0, 20.0])
def test_moments_match_analytic(c):
    rng = np.random.default_rng(int(c * 10))
    n = 100_000
    draws = sample_pg(1, c, rng, size=n)
    mean_se = draws.std() / np.sqrt(n)
    assert abs(draws.mean() - pg_mean(1, c)) < 4 * mean_se
    m = draws.mean()
    var_se = ((draws - m) ** 2).std() / np.sqrt(n)
    assert abs(draws.var() - pg_var(1, c)) < 4 * var_se


def test_symmetry_in_c():
    rng = np.random.default_rng(3)
    n = 10_000
    a = sample_pg(1, 1.8, rng, size=n)
    b = sample_pg(1, -1.8, rng, size=n)
    _, pval = ks_2samp(a, b)
    assert pval > 0.01


def test_ks_against_sum_of_gammas_oracle():
    rng = np.random.default_rng(4)
    n = 10_000
    for c in (0.0, 1.0, 5.0):
        exact = sample_pg(1, c, rng, size=n)
        oracle = sample_pg_sum_of_gammas(1, c, rng, size=n)
        _, pval = ks_2samp(exact, oracle)
        assert pval > 0.01, f"KS failed at c={c}"


def test_integer_b_by_summation():
    rng = np.random.default_rng(5)
    n = 50_000
    draws = sample_pg(3, 1.0, rng, size=n)
    se = draws.std() / np.sqrt(n)
    assert abs(draws.mean() - pg_mean(3, 1.0)) < 4 * se


def test_large_c_concentrates():
    rng = np.random.default_rng(6)
    c = 50.0
    draws = sample_pg(1, c, rng, size=5000)
    assert abs(draws.mean() - 1.0 / (2 * c)) < 0.002
    assert draws.var() < pg_var(1, 20.0)


def test_vector_c_input():
    rng = np.random.default_rng(7)
    c = np.array([0.0, 1.0, -1.0, 10.0])
    draws = sample_pg(1, c, rng)
    assert draws.shape == (4,)
    assert (draws > 0).all()


def test_scalar_draw():
    rng = np.random.default_rng(8)
    d = sample_pg(1, 0.5, rng)
    assert np.isscalar(d) and d > 0
