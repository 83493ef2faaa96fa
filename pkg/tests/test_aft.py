import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aftite.aft import (FitOptions, FittedModel, ModelParams, fit, fit_design, information_criteria, loglik,
                        loglik_grad, loglik_hessian)
from aftite.design import ModelSpec, build_design
from aftite.errors import DataError, NumericalError, RankDeficientError
from aftite.ingest import AnalysisDataset
from aftite.laws import LAW_TAGS
from aftite.simlab import default_truth, simulate_trial


def _toy(rng, n=60, p=3):
    X = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
    time = np.exp(1 + X[:, 1] * 0.3 + rng.gumbel(size=n) * 0.1) + 0.01
    event = (rng.uniform(size=n) < 0.7).astype(int)
    return X, time, event


def test_single_observation_closed_forms():
    # beta = 0, sigma = 1, t = 1 -> z = 0; Weibull log g(0) = -1, log G(0) = -1
    X = np.ones((1, 1))
    params = ModelParams(np.zeros(1), 0.0)
    assert loglik(params, X, [1.0], [1], "weibull") == pytest.approx(-1.0)
    assert loglik(params, X, [1.0], [0], "weibull") == pytest.approx(-1.0)
    assert loglik(params, X, [1.0], [0], "lognormal") == pytest.approx(math.log(0.5))


def test_gradient_matches_finite_differences(rng):
    worst = 0.0
    for dist in LAW_TAGS:
        X, time, event = _toy(rng)
        for _ in range(50):
            theta = np.concatenate([rng.normal(0, 0.5, X.shape[1]) + [1.0, 0, 0], [rng.uniform(-1.5, 0.5)]])
            g = loglik_grad(theta, X, time, event, dist)
            h = 1e-6 * np.maximum(1.0, np.abs(theta))
            fd = np.array([(loglik(theta + h[j] * e, X, time, event, dist)
                            - loglik(theta - h[j] * e, X, time, event, dist)) / (2 * h[j])
                           for j, e in enumerate(np.eye(theta.size))])
            rel = np.max(np.abs(g - fd) / np.maximum(1.0, np.abs(fd)))
            worst = max(worst, rel)
    assert worst < 1e-6


@pytest.mark.parametrize("dist", LAW_TAGS)
def test_hessian_matches_finite_differences(rng, dist):
    X, time, event = _toy(rng)
    theta = np.array([1.0, 0.2, -0.1, math.log(0.5)])
    H = loglik_hessian(theta, X, time, event, dist)
    h = 1e-6
    fd = np.column_stack([(loglik_grad(theta + h * e, X, time, event, dist)
                           - loglik_grad(theta - h * e, X, time, event, dist)) / (2 * h) for e in np.eye(4)])
    np.testing.assert_allclose(H, fd, rtol=1e-5, atol=1e-4)
    np.testing.assert_allclose(H, H.T, atol=1e-10)


@given(ll=st.floats(-1e5, 0), k=st.integers(1, 40), n=st.integers(2, 10_000))
def test_bic_minus_aic_identity(ll, k, n):
    aic, bic = information_criteria(ll, k, n)
    assert bic - aic == pytest.approx(k * (math.log(n) - 2), rel=1e-12, abs=1e-9)


def test_parameter_counts_match_published_ic(fits):
    # k recovered from the published AIC/BIC pairs: (BIC - AIC) / (ln 475 - 2)
    published = {"model1": (3273.508, 3319.304), "model2a": (3260.219, 3314.342), "model2b": (3269.744, 3348.847)}
    for tag, (aic, bic) in published.items():
        k_published = round((bic - aic) / (math.log(475) - 2))
        assert fits[tag].k == k_published
    assert [fits[t].k for t in ("model1", "model2a", "model2b")] == [11, 13, 19]


def test_recovery_on_simulated_weibull_truth():
    truth = default_truth()
    sim = simulate_trial(truth, 2000, seed=7)
    f = fit(sim.data, truth.spec, "weibull")
    assert f.converged
    z = (f.params.beta - np.asarray(truth.beta)) / f.se[:-1]
    assert np.all(np.abs(z) < 3)
    assert abs(f.params.log_sigma - math.log(truth.sigma)) < 3 * f.se[-1]


def test_frequency_weights_equal_duplication(rng):
    X, time, event = _toy(rng, n=40)
    w = rng.integers(0, 4, 40).astype(float)
    idx = np.repeat(np.arange(40), w.astype(int))
    from aftite.design import DesignMatrix

    cols = tuple((f"x{j}", "intercept" if j == 0 else "covariate") for j in range(3))
    d_full = DesignMatrix(cols, X, (None, "x1", "x2"))
    d_dup = DesignMatrix(cols, X[idx], (None, "x1", "x2"))
    a = fit_design(d_full, time, event, "weibull", weights=w)
    b = fit_design(d_dup, time[idx], event[idx], "weibull")
    np.testing.assert_allclose(a.theta, b.theta, rtol=1e-7, atol=1e-9)
    assert a.loglik == pytest.approx(b.loglik, rel=1e-10)
    assert a.n == b.n


def test_time_rescaling_shifts_intercept(prostate):
    spec = ModelSpec(("age", "logsz"), ())
    a = fit(prostate, spec)
    scaled = AnalysisDataset(prostate.time * 30.0, prostate.event, prostate.z, prostate.x, prostate.names, ())
    b = fit(scaled, spec)
    assert b.params.beta[0] - a.params.beta[0] == pytest.approx(math.log(30.0), abs=1e-7)
    np.testing.assert_allclose(a.params.beta[1:], b.params.beta[1:], atol=1e-7)
    assert a.loglik - b.loglik == pytest.approx(prostate.n_events * math.log(30.0), abs=1e-6)


def test_nonfinite_loglik_names_row():
    # z = 1000 overflows exp(z) in the second row
    X = np.array([[1.0], [1000.0]])
    with pytest.raises(NumericalError, match="row"):
        loglik(ModelParams(np.array([-1.0]), 0.0), X, [1.0, 1.0], [1, 1], "weibull")


def test_zero_events_and_rank_deficiency(prostate):
    spec = ModelSpec(("age",), ())
    none = AnalysisDataset(prostate.time, np.zeros(prostate.n), prostate.z, prostate.x, prostate.names, ())
    with pytest.raises(DataError, match="no events"):
        fit(none, spec)
    x = np.column_stack([prostate.x, 2 * prostate.column("age")])
    dup = AnalysisDataset(prostate.time, prostate.event, prostate.z, x, prostate.names + ("age2",), ())
    with pytest.raises(RankDeficientError):
        fit(dup, ModelSpec(("age", "age2"), ()))


def test_converges_and_finds_stationary_point(fits, prostate):
    for f in fits.values():
        assert f.converged
        design = build_design(prostate, f.spec)
        g = loglik_grad(f.theta, design.values, prostate.time, prostate.event, f.dist)
        assert np.max(np.abs(g)) < 1e-5


def test_start_does_not_change_optimum(prostate, fits):
    f0 = fits["model2a"]
    f1 = fit(prostate, f0.spec, "weibull", FitOptions(start=tuple(f0.theta + 0.05)))
    np.testing.assert_allclose(f0.theta, f1.theta, atol=1e-5)


def test_fitted_model_round_trip(fits):
    f = fits["model2a"]
    g = FittedModel.from_dict(f.to_dict())
    np.testing.assert_array_equal(f.theta, g.theta)
    np.testing.assert_array_equal(f.cov, g.cov)
    assert g.column_names == f.column_names and g.aic == f.aic and g.spec == f.spec


def test_coef_table_time_ratios(fits):
    f = fits["model1"]
    row = f.coef_table()[f.index("rx")]
    assert row["time_ratio"] == pytest.approx(math.exp(row["estimate"]))
    assert row["tr_lower"] < row["time_ratio"] < row["tr_upper"]
