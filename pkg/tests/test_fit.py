import dataclasses

import numpy as np
import pytest

from _sim import dlnm_data, dlnm_spec, small_poisson
from hdlnm import ConvergenceError, FittedModel, ModelSpec, TimeSeriesDataset, fit, predict
from hdlnm.family import Gaussian, Poisson
from hdlnm.fit import build_design, laplace_reml, pirls, predict_terms, reml_score

START = np.datetime64("2000-01-01")


def smooth_data(n=400, seed=0, offset=False):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 10, n)
    pop = rng.uniform(50, 150, n) if offset else None
    base = np.log(pop / 100) if offset else 0.0
    y = rng.poisson(np.exp(1.5 + 0.5 * np.sin(x) + base)).astype(float)
    covs = {"x": x}
    return TimeSeriesDataset(time=START + np.arange(n), y=y, covariates=covs, offset=pop)


def smooth_spec(k=8, offset=None, family="poisson"):
    return ModelSpec([{"kind": "intercept"},
                      {"kind": "smooth", "name": "s", "variable": "x",
                       "basis": {"type": "thinplate", "k": k}}], family=family, offset=offset)


DLNM_SMALL = ModelSpec([
    {"kind": "intercept"},
    {"kind": "lag_tensor", "name": "h", "covariates": ["temp"], "lag": 5,
     "bases": [{"type": "thinplate", "k": 4}, {"type": "thinplate", "k": 5}]},
])


@pytest.fixture(scope="module")
def dlnm_small():
    ds = small_poisson(400)
    return ds, fit(DLNM_SMALL, ds)


def test_spec_validation():
    with pytest.raises(ValueError, match="intercept"):
        ModelSpec([{"kind": "smooth", "variable": "x"}])
    with pytest.raises(ValueError, match="intercept"):
        ModelSpec([{"kind": "intercept"}, {"kind": "intercept", "name": "b"}])
    with pytest.raises(ValueError, match="unique"):
        ModelSpec([{"kind": "intercept"}, {"kind": "smooth", "name": "s", "variable": "x"},
                   {"kind": "smooth", "name": "s", "variable": "z"}])
    with pytest.raises(ValueError):
        ModelSpec([{"kind": "intercept"}, {"kind": "spline"}])
    with pytest.raises(KeyError):
        fit(ModelSpec([{"kind": "intercept"}, {"kind": "smooth", "name": "s",
                                               "variable": "missing"}]), smooth_data())


def test_fitted_model_invariants(dlnm_small):
    _, m = dlnm_small
    V = m.cov
    assert np.max(np.abs(V - V.T)) == 0
    ev = np.linalg.eigvalsh(V)
    assert ev.min() >= -1e-10 * ev.max()
    for term in m.terms:
        if term.name in m.edf:
            assert -1e-8 <= m.edf[term.name] <= term.n_coef + 1e-8
    assert abs(sum(m.edf.values()) + 1 - m.edf_total) < 1e-6
    assert m.converged


def test_pirls_fixed_point_is_penalized_least_squares():
    ds = smooth_data()
    design = build_design(smooth_spec(), ds)
    S = design.total_penalty([3.0])
    res = pirls(design.X, S, Poisson(), design.y)
    z, w = Poisson().working(design.y, res.mu, res.eta)
    XtW = design.X.T * w
    direct = np.linalg.solve(XtW @ design.X + S, XtW @ z)
    np.testing.assert_allclose(direct, res.beta, atol=1e-8)


def test_pirls_large_lambda_kills_range_space():
    ds = smooth_data()
    design = build_design(smooth_spec(), ds)
    res = pirls(design.X, design.total_penalty([1e12]), Poisson(), design.y)
    S = design.penalties[0].S
    ev, U = np.linalg.eigh(S)
    rng_part = U[:, ev > 1e-8 * ev.max()].T @ res.beta[1:]
    assert np.max(np.abs(rng_part)) < 1e-6


def test_pirls_singular_system_raises():
    # a rank-deficient system is rescued by the jitter, an all-zero one is not
    res = pirls(np.ones((5, 2)), np.zeros((2, 2)), Gaussian(), np.arange(5.0))
    assert np.all(np.isfinite(res.beta))
    with pytest.raises(np.linalg.LinAlgError):
        pirls(np.zeros((5, 2)), np.zeros((2, 2)), Gaussian(), np.arange(5.0))


def test_reml_penalty_rescaling_invariance():
    ds = smooth_data()
    design = build_design(smooth_spec(), ds)
    s1, _ = laplace_reml(design, [2.0], Poisson())
    scaled = dataclasses.replace(design, penalties=[dataclasses.replace(design.penalties[0],
                                                                        S=7.0 * design.penalties[0].S)])
    s2, _ = laplace_reml(scaled, [2.0 / 7.0], Poisson())
    assert abs(s1 - s2) < 1e-8


def test_zero_column_ridge_leaves_score_unchanged():
    ds = smooth_data()
    n = len(ds)
    levels = np.repeat(np.arange(4.0), n // 4)
    with_zero = TimeSeriesDataset(time=ds.time, y=ds.y,
                                  covariates={"x": ds.covariates["x"], "g": levels})
    spec = ModelSpec([{"kind": "intercept"},
                      {"kind": "smooth", "name": "s", "variable": "x",
                       "basis": {"type": "thinplate", "k": 8}},
                      {"kind": "smooth", "name": "r", "variable": "g",
                       "basis": {"type": "ridge_factor"}}])
    # the ridge term sees the zero column through a zero-valued covariate
    design = build_design(spec, with_zero)
    design.X[:, design.slices[2]] = 0.0
    base = fit(smooth_spec(), ds)
    score_small, res_small = laplace_reml(design, [np.exp(base.log_sp[0]), 1e-2], Poisson())
    score_big, res_big = laplace_reml(design, [np.exp(base.log_sp[0]), 1e8], Poisson())
    # the penalty log-determinant and the Hessian block cancel exactly
    assert abs(score_big - score_small) < 1e-6
    np.testing.assert_allclose(res_small.mu, res_big.mu, rtol=1e-10)
    np.testing.assert_allclose(res_big.mu, base.fitted, rtol=1e-4)


def test_intercept_variance_matches_glm():
    ds = smooth_data()
    m = fit(ModelSpec([{"kind": "intercept"}]), ds)
    assert m.coef[0] == pytest.approx(np.log(ds.y.mean()), abs=1e-10)
    assert m.cov[0, 0] == pytest.approx(1.0 / m.fitted.sum(), rel=1e-6)


def test_edf_monotone_in_lambda():
    ds = smooth_data()
    edfs = [fit(smooth_spec(), ds, sp=[lam]).edf_total for lam in np.logspace(-4, 4, 9)]
    assert all(b <= a + 1e-8 for a, b in zip(edfs, edfs[1:]))
    assert edfs[0] > 7.5 and edfs[-1] < 3.5


def test_reproducible_bit_identical():
    ds = smooth_data()
    a, b = fit(smooth_spec(), ds, seed=4), fit(smooth_spec(), ds, seed=4)
    np.testing.assert_array_equal(a.coef, b.coef)
    np.testing.assert_array_equal(a.log_sp, b.log_sp)
    assert a.to_json() == b.to_json()


def test_prediction_contract(dlnm_small):
    ds, m = dlnm_small
    eta, mu = predict(m, ds)
    np.testing.assert_array_equal(mu, m.fitted)
    pred = predict_terms(m, ds)
    total = sum(pred.terms.values())
    assert np.max(np.abs(total - pred.eta)) < 1e-10
    with pytest.raises(ValueError, match="lag history"):
        predict(m, ds.subset(np.arange(5)))


def test_offset_doubling_doubles_mean():
    ds = smooth_data(offset=True)
    m = fit(smooth_spec(offset="offset"), ds)
    doubled = TimeSeriesDataset(time=ds.time, y=ds.y, covariates=ds.covariates,
                                offset=2 * ds.offset)
    np.testing.assert_allclose(predict(m, doubled)[1], 2 * predict(m, ds)[1], rtol=1e-12)


def test_intercept_is_mean_linear_predictor_and_edf_shrinks():
    ds = dlnm_data(1500, 1)
    m = fit(dlnm_spec(), ds)
    # every smooth is centered over the rows, so the intercept is the average of eta
    assert m.coef[0] == pytest.approx(np.mean(np.log(m.fitted)), abs=1e-10)
    y = ds.y[20:]
    assert abs(np.exp(m.coef[0]) - y.mean()) / y.mean() < 0.05
    assert m.edf["h"] < 0.5 * m.term("h").n_coef


def test_unpenalized_dlnm_keeps_all_identified_coefficients():
    ds = dlnm_data(1500, 2)
    m = fit(dlnm_spec(), ds, sp=[0.0, 0.0])
    # 98 coefficients minus the 8 further lag-only directions the data cannot see
    assert m.edf["h"] == pytest.approx(90.0, abs=1e-6)


def test_negbin_theta_estimate():
    rng = np.random.default_rng(3)
    n = 3000
    y = rng.negative_binomial(2.0, 2.0 / (2.0 + 18.0), n).astype(float)
    ds = TimeSeriesDataset(time=START + np.arange(n), y=y)
    m = fit(ModelSpec([{"kind": "intercept"}], family={"kind": "negbin"}), ds)
    assert 1.7 < m.theta < 2.3
    fixed = fit(ModelSpec([{"kind": "intercept"}], family={"kind": "negbin"}), ds, theta=5.0)
    assert fixed.theta == 5.0


def test_serialization_roundtrip(dlnm_small):
    ds, m = dlnm_small
    back = FittedModel.from_json(m.to_json())
    assert back.to_json() == m.to_json()
    np.testing.assert_array_equal(predict(back, ds)[0], predict(m, ds)[0])
    d = m.to_dict()
    d["schema_version"] = 99
    with pytest.raises(ValueError):
        FittedModel.from_dict(d)


def test_too_few_rows():
    rng = np.random.default_rng(0)
    n = 6
    ds = TimeSeriesDataset(time=START + np.arange(n), y=rng.poisson(3, n).astype(float),
                           covariates={v: rng.normal(size=n) for v in "abc"})
    # three linear null spaces give 2**3 - 1 unpenalized columns plus the intercept
    spec = ModelSpec([{"kind": "intercept"},
                      {"kind": "tensor", "name": "t", "variables": list("abc"),
                       "bases": [{"type": "thinplate", "k": 3}] * 3}])
    with pytest.raises(ValueError, match="fewer data rows"):
        fit(spec, ds)


def test_reml_score_sentinel_and_helper():
    ds = smooth_data()
    s = reml_score([0.0], None, smooth_spec(), ds)
    assert np.isfinite(s)
    m = fit(smooth_spec(), ds)
    assert reml_score(m.log_sp, None, smooth_spec(), ds) == pytest.approx(m.reml, abs=1e-6)


def test_convergence_error_when_inner_fit_fails(monkeypatch):
    import importlib

    fitmod = importlib.import_module("hdlnm.fit")

    def broken(*args, **kwargs):
        res = fitmod.PirlsResult(beta=np.zeros(1), eta=np.zeros(1), mu=np.ones(1),
                                 w=np.ones(1), deviance=0.0, penalized_deviance=0.0,
                                 converged=False, iterations=200)
        return -np.inf, res

    monkeypatch.setattr(fitmod, "laplace_reml", broken)
    with pytest.raises(ConvergenceError):
        fit(smooth_spec(), smooth_data())
