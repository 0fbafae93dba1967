import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdlnm import ModelSpec, TimeSeriesDataset, fit, predict
from hdlnm.basis import (
    EvaluatedBasis, ExtrapolationWarning, center_basis, cyclic_cubic_basis, gp_basis,
    make_basis, nullspace_dimension, predict_basis, ridge_basis, thinplate_basis,
)
from hdlnm.diagnostics import acf
from hdlnm.family import Gaussian
from hdlnm.fit import pirls


def check_penalties(b: EvaluatedBasis):
    for S, m in zip(b.penalties, b.nullspace_dim):
        assert np.max(np.abs(S - S.T)) <= 1e-10
        ev = np.linalg.eigvalsh(S)
        assert ev.min() >= -1e-8 * ev.max()
        assert nullspace_dimension(S) == m


def test_thinplate_dimensions_and_nullspace():
    x = np.linspace(0, 1, 100)
    b = thinplate_basis(x, 10)
    assert b.X.shape == (100, 10)
    assert b.penalties[0].shape == (10, 10)
    ev = np.linalg.eigvalsh(b.penalties[0])
    assert np.sum(ev <= 1e-8 * ev.max()) == 2
    check_penalties(b)


def test_thinplate_linear_functions_unpenalized():
    x = np.linspace(-3, 5, 80)
    b = thinplate_basis(x, 8)
    S = b.penalties[0]
    for target in (np.ones_like(x), x, 2 - 0.5 * x):
        beta, *_ = np.linalg.lstsq(b.X, target, rcond=None)
        np.testing.assert_allclose(b.X @ beta, target, atol=1e-8)
        assert abs(beta @ S @ beta) < 1e-10


def test_thinplate_errors():
    with pytest.raises(ValueError):
        thinplate_basis(np.arange(10.0), 2)
    with pytest.raises(ValueError):
        thinplate_basis(np.repeat([1.0, 2.0, 3.0], 5), 5)


def test_thinplate_small_lambda_approaches_quadratic_fit():
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 1, 2000)
    y = x ** 2 + rng.normal(0, 0.05, x.size)
    b = thinplate_basis(x, 12)
    beta = np.linalg.solve(b.X.T @ b.X + 1e-9 * b.penalties[0], b.X.T @ y)
    Q = np.column_stack([np.ones_like(x), x, x ** 2])
    quad = Q @ np.linalg.lstsq(Q, y, rcond=None)[0]
    assert np.max(np.abs(b.X @ beta - quad)) < 0.02


def test_thinplate_thinning_caps_knots():
    x = np.random.default_rng(2).normal(size=5000)
    b = thinplate_basis(x, 6, max_knots=300)
    assert len(b.info["knots"]) == 300
    check_penalties(b)


def test_cyclic_periodicity_and_penalty():
    knots = np.linspace(0, 10, 9)
    b = cyclic_cubic_basis(np.linspace(0, 10, 50), knots=knots)
    assert b.k == 8
    check_penalties(b)
    assert b.nullspace_dim == [1]
    ends = predict_basis(b, [0.0, 10.0])
    np.testing.assert_allclose(ends[0], ends[1], atol=1e-12)
    # first derivatives match too
    eps = 1e-6
    d = predict_basis(b, [eps, 10 - eps])
    np.testing.assert_allclose((d[0] - ends[0]) / eps, (ends[1] - d[1]) / eps, atol=1e-4)
    const = np.ones(b.k)
    np.testing.assert_allclose(b.X @ const, 1.0, atol=1e-12)
    assert abs(const @ b.penalties[0] @ const) < 1e-12


def test_cyclic_errors():
    with pytest.raises(ValueError):
        cyclic_cubic_basis([1.0, 2.0], knots=[0, 2, 1, 3])
    with pytest.raises(ValueError):
        cyclic_cubic_basis([5.0], knots=[0, 1, 2, 3])
    with pytest.raises(ValueError):
        cyclic_cubic_basis([1.0], knots=[0, 1, 2])
    b = cyclic_cubic_basis([1.0, 2.0], knots=[0, 1, 2, 3])
    with pytest.raises(ValueError):
        predict_basis(b, [3.5])


def test_cyclic_midpoints_match_dense_construction():
    knots = np.linspace(1, 366, 9)
    coarse = cyclic_cubic_basis(knots, knots=knots)
    mids = 0.5 * (knots[1:] + knots[:-1])
    dense = cyclic_cubic_basis(np.sort(np.concatenate([knots, mids])), knots=knots)
    rows = predict_basis(coarse, mids)
    idx = np.searchsorted(np.sort(np.concatenate([knots, mids])), mids)
    np.testing.assert_allclose(rows, dense.X[idx], atol=1e-12)


def test_cyclic_recovers_sine():
    rng = np.random.default_rng(3)
    n = 3650
    t = np.datetime64("2001-01-01") + np.arange(n)
    ds = TimeSeriesDataset(time=t, y=np.zeros(n))
    doy = ds.variable("doy")
    truth = np.sin(2 * np.pi * doy / 365)
    ds = TimeSeriesDataset(time=t, y=truth + rng.normal(0, 0.5, n))
    spec = ModelSpec([{"kind": "intercept"},
                      {"kind": "smooth", "name": "s", "variable": "doy",
                       "basis": {"type": "cyclic_cubic", "k": 10, "domain": [1, 366]}}],
                     family={"kind": "gaussian", "scale": 0.25})
    eta = predict(fit(spec, ds), ds)[0]
    assert np.sqrt(np.mean((eta - truth) ** 2)) < 0.05


def test_ridge_basis():
    levels = np.array(list("abcdeabcde"))
    b = ridge_basis(levels)
    assert b.X.shape == (10, 5)
    np.testing.assert_array_equal(b.penalties[0], np.eye(5))
    assert b.nullspace_dim == [0]
    with pytest.raises(ValueError):
        ridge_basis(["a", "a"])
    with pytest.raises(ValueError):
        predict_basis(b, ["f"])


def test_ridge_shrinkage_matches_closed_form():
    rng = np.random.default_rng(4)
    k, m, scale = 4, 25, 2.0
    levels = np.repeat(np.arange(k), m).astype(str)
    effects = np.array([1.0, -0.5, 0.3, 2.0])
    y = effects[np.repeat(np.arange(k), m)] + rng.normal(0, np.sqrt(scale), k * m)
    b = ridge_basis(levels)
    ybar = np.array([y[levels == str(i)].mean() for i in range(k)])
    for lam in (0.0, 0.1, 1.0, 10.0, 1e6):
        res = pirls(b.X, lam * b.penalties[0], Gaussian(scale), y)
        # penalized deviance uses unit-scaled residuals, so lambda enters as lam * scale
        np.testing.assert_allclose(res.beta, m * ybar / (m + lam * scale), atol=1e-8)
    assert np.max(np.abs(res.beta)) < 1e-4


def test_gp_full_rank_reconstructs_kernel():
    t = np.arange(10.0)
    b = gp_basis(t, 10, power=1.0, range=3.0)
    C = np.exp(-np.abs(t[:, None] - t[None, :]) / 3.0)
    rebuilt = b.X @ np.diag(b.info["eigenvalues"]) @ b.X.T
    assert np.max(np.abs(rebuilt - C)) < 1e-6
    check_penalties(b)
    assert b.nullspace_dim == [0]


def test_gp_power_is_clamped_and_kernel_flattens():
    t = np.arange(30.0)
    b = gp_basis(t, 5, power=0.001)
    assert b.info["power"] == 0.05
    # small powers push all off-diagonal correlations toward one common value
    off = np.exp(-(np.abs(t[:, None] - t[None, :])[np.triu_indices(30, 1)] / 10.0) ** 0.05)
    wide = np.exp(-(np.abs(t[:, None] - t[None, :])[np.triu_indices(30, 1)] / 10.0) ** 1.0)
    assert np.ptp(off) < np.ptp(wide)
    with pytest.raises(ValueError):
        gp_basis(np.arange(5.0), 6)


def test_gp_term_tracks_ar1_autocorrelation():
    rng = np.random.default_rng(5)
    n, phi = 400, 0.8
    u = np.zeros(n)
    e = rng.normal(0, np.sqrt(1 - phi ** 2), n)
    for i in range(1, n):
        u[i] = phi * u[i - 1] + e[i]
    ds = TimeSeriesDataset(time=np.datetime64("2000-01-01") + np.arange(n),
                           y=u + rng.normal(0, 0.3, n))
    spec = ModelSpec([{"kind": "intercept"},
                      {"kind": "smooth", "name": "gp", "variable": "time",
                       "basis": {"type": "gp", "k": n, "power": 1.0, "range": -1 / np.log(phi)}}],
                     family={"kind": "gaussian", "scale": 0.09})
    eta = predict(fit(spec, ds), ds)[0]
    assert abs(acf(eta, 1)[0] - phi) < 0.1


def test_centering():
    x = np.random.default_rng(6).uniform(0, 5, 200)
    b = thinplate_basis(x, 8)
    c = center_basis(b)
    assert c.k == 7
    np.testing.assert_allclose(c.X.sum(axis=0), 0, atol=1e-8)
    check_penalties(c)
    # same column space once an intercept is present
    y = np.sin(x) + x
    fits = []
    for X in (b.X, np.column_stack([np.ones_like(x), c.X])):
        beta, *_ = np.linalg.lstsq(X, y, rcond=None)
        fits.append(X @ beta)
    np.testing.assert_allclose(fits[0], fits[1], atol=1e-6)
    np.testing.assert_array_equal(predict_basis(c, x), c.X)


def test_predict_basis_training_rows_and_repeats():
    x = np.linspace(0, 1, 40)
    for b in (thinplate_basis(x, 6), cyclic_cubic_basis(x, k=6), gp_basis(x, 6, 1.0, 0.3)):
        np.testing.assert_array_equal(predict_basis(b, x), b.X)
        rows = predict_basis(b, np.full(3, 0.37))
        assert np.all(rows == rows[0])


def test_thinplate_extrapolation_warns():
    b = thinplate_basis(np.linspace(0, 1, 20), 5)
    with pytest.warns(ExtrapolationWarning):
        predict_basis(b, [1.5])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        predict_basis(b, [0.5])


def test_serialization_roundtrip():
    x = np.linspace(0, 3, 30)
    for b in (center_basis(thinplate_basis(x, 6)), cyclic_cubic_basis(x, k=5),
              ridge_basis(np.array(list("xyzxyz"))), gp_basis(x, 4, 1.0, 1.0)):
        back = EvaluatedBasis.from_dict(b.to_dict())
        pts = np.array(list("xzy")) if b.kind == "ridge_factor" else x[::3]
        np.testing.assert_array_equal(predict_basis(back, pts, warn=False),
                                      predict_basis(b, pts, warn=False))


def test_make_basis_dispatch():
    x = np.linspace(0, 1, 20)
    assert make_basis({"type": "tp", "k": 5}, x).kind == "thinplate"
    assert make_basis({"type": "cc", "k": 5}, x).kind == "cyclic_cubic"
    assert make_basis({"type": "gp", "k": 5}, x).kind == "gp_power_exponential"
    with pytest.raises(ValueError):
        make_basis({"type": "bspline"}, x)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(3, 12), st.integers(30, 150))
def test_penalty_contract_and_determinism(seed, k, n):
    x = np.random.default_rng(seed).normal(size=n)
    for make in (lambda: thinplate_basis(x, k), lambda: cyclic_cubic_basis(x, k=max(k, 3)),
                 lambda: gp_basis(x, min(k, n), 1.0, 1.0)):
        b1, b2 = make(), make()
        check_penalties(b1)
        np.testing.assert_array_equal(b1.X, b2.X)
        c = center_basis(b1)
        check_penalties(c)
        np.testing.assert_allclose(c.X.sum(axis=0), 0, atol=1e-8 * max(1.0, np.abs(b1.X).sum()))
