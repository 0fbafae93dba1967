import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from hdlnm.family import (
    NegativeBinomial, Poisson, aic, deviance, irls_weights, log_likelihood, make_family, simulate,
)
from hdlnm.fit import pirls


def test_poisson_closed_forms():
    assert log_likelihood(Poisson(), [0], [1.0]) == pytest.approx(-1.0, abs=1e-14)
    assert log_likelihood(Poisson(), [2], [2.0]) == pytest.approx(2 * np.log(2) - 2 - np.log(2),
                                                                  abs=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 200), min_size=1, max_size=20), st.floats(0.05, 300),
       st.floats(0.1, 100))
def test_loglik_matches_scipy(y, mu, theta):
    y = np.array(y, dtype=float)
    m = np.full(len(y), mu)
    assert log_likelihood(Poisson(), y, m) == pytest.approx(stats.poisson.logpmf(y, mu).sum(),
                                                            rel=1e-10, abs=1e-10)
    nb = stats.nbinom.logpmf(y, theta, theta / (theta + mu)).sum()
    assert log_likelihood(NegativeBinomial(theta), y, m) == pytest.approx(nb, rel=1e-9, abs=1e-9)


def test_negbin_poisson_limit():
    y = np.array([0, 1, 3, 7, 20, 18], dtype=float)
    mu = np.array([0.5, 1.0, 2.0, 8.0, 18.0, 18.0])
    assert abs(log_likelihood(NegativeBinomial(1e8), y, mu) - log_likelihood(Poisson(), y, mu)) < 1e-6


def test_irls_weights():
    mu = np.array([0.5, 2.0, 10.0])
    y = np.array([1.0, 1.0, 12.0])
    z, w = irls_weights(Poisson(), y, mu)
    np.testing.assert_allclose(w, mu)
    np.testing.assert_allclose(z, np.log(mu) + (y - mu) / mu)
    _, w1 = irls_weights(NegativeBinomial(1.0), [1.0], [1.0])
    assert w1[0] == pytest.approx(0.5)
    with pytest.raises(ValueError):
        irls_weights(Poisson(), [1.0], [0.0])


def test_intercept_irls_gives_sample_mean():
    y = np.array([1.0, 2.0, 3.0])
    res = pirls(np.ones((3, 1)), None, Poisson(), y)
    assert res.converged
    assert res.beta[0] == pytest.approx(np.log(2.0), abs=1e-10)
    y = np.random.default_rng(0).negative_binomial(2, 0.1, 300).astype(float)
    res = pirls(np.ones((300, 1)), None, NegativeBinomial(2.0), y)
    assert np.exp(res.beta[0]) == pytest.approx(y.mean(), rel=1e-8)


def test_deviance_zero_at_saturation_and_aic():
    y = np.array([0.0, 3.0, 8.0])
    for fam in (Poisson(), NegativeBinomial(2.5)):
        assert deviance(fam, y, np.where(y == 0, 1e-300, y)) == pytest.approx(0.0, abs=1e-12)
    mu = np.array([1.0, 2.0, 7.0])
    assert aic(Poisson(), y, mu, 2.0) == pytest.approx(-2 * log_likelihood(Poisson(), y, mu) + 4)
    nb = NegativeBinomial(3.0)
    assert aic(nb, y, mu, 2.0) == pytest.approx(-2 * log_likelihood(nb, y, mu) + 6)


def test_deviance_equals_twice_loglik_gap():
    rng = np.random.default_rng(1)
    y = rng.poisson(5, 50).astype(float)
    mu = rng.uniform(2, 8, 50)
    for fam in (Poisson(), NegativeBinomial(4.0)):
        sat = np.where(y == 0, 1e-300, y)
        gap = 2 * (fam.loglik(y, sat) - fam.loglik(y, mu))
        assert fam.deviance(y, mu) == pytest.approx(gap, rel=1e-10)


def test_nested_models_lower_minus_two_loglik():
    rng = np.random.default_rng(2)
    n = 400
    x = rng.uniform(0, 1, n)
    y = rng.poisson(np.exp(1 + x - x ** 2)).astype(float)
    X = np.column_stack([np.ones(n), x, x ** 2, x ** 3])
    values = []
    for p in range(1, 5):
        res = pirls(X[:, :p], None, Poisson(), y)
        values.append(-2 * Poisson().loglik(y, res.mu))
    assert all(b <= a + 1e-9 for a, b in zip(values, values[1:]))


def test_poisson_simulation_moments():
    draws = simulate(Poisson(), np.full(10 ** 6, 5.0), np.random.default_rng(3))
    assert abs(draws.mean() - 5) < 0.01
    assert abs(draws.var() - 5) < 0.05


@pytest.mark.parametrize("theta", [0.5, 2.0, 20.0, 100.0])
def test_negbin_more_variable_than_poisson(theta):
    rng = np.random.default_rng(4)
    mu = np.full(200_000, 18.0)
    ratio = NegativeBinomial(theta).sample(mu, rng).var() / Poisson().sample(mu, rng).var()
    assert ratio > 1


def test_poisson_deviance_ratio_near_one():
    rng = np.random.default_rng(5)
    mu = rng.uniform(10, 30, 10_000)
    y = Poisson().sample(mu, rng)
    assert 0.9 <= deviance(Poisson(), y, mu) / len(y) <= 1.1


def test_simulation_reproducible():
    mu = np.arange(1.0, 20.0)
    a = simulate(NegativeBinomial(2.0), mu, np.random.default_rng(9))
    b = simulate(NegativeBinomial(2.0), mu, np.random.default_rng(9))
    np.testing.assert_array_equal(a, b)


def test_errors_and_factory():
    with pytest.raises(ValueError):
        log_likelihood(Poisson(), [1.0], [np.inf])
    with pytest.raises(ValueError):
        NegativeBinomial(0.0)
    with pytest.raises(ValueError, match="quasi"):
        make_family("quasipoisson")
    with pytest.raises(ValueError):
        make_family({"kind": "tweedie"})
    assert make_family({"kind": "negbin", "theta": 3}).theta == 3.0
    assert isinstance(make_family("poisson"), Poisson)
    assert Poisson().variance(np.array([2.0]))[0] == 2.0
    assert NegativeBinomial(2.0).variance(np.array([2.0]))[0] == 4.0
