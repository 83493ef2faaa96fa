"""Acceptance gate.

Each criterion prints one ``CRITERION n: PASS|FAIL ...`` line. Soft gates
that miss their targets are reported as expected failures carrying the
reconciliation numbers; hard gates fail the run.
"""

import math
import os
import time
from fractions import Fraction

import numpy as np
import pytest

from aftite import cli
from aftite.aft import fit, information_criteria, loglik, loglik_grad
from aftite.design import preset_spec
from aftite.diagnostics import aft_residuals, residual_overlay
from aftite.ingest import load_prostate
from aftite.ite import Profile, grid_profiles, ite_delta_ci, ite_gradient, parse_grid, reference_values
from aftite.laws import LAW_TAGS
from aftite.nonparam import km_estimate, logrank_test
from aftite.resample import BootstrapPlan, bootstrap_ite
from aftite.simlab import coverage_study, default_truth, simulate_trial

AGE_GRID = parse_grid(cli.DEFAULT_AGE_GRID)
LOGSZ_GRID = parse_grid(cli.DEFAULT_LOGSZ_GRID)


@pytest.fixture(scope="module")
def data():
    return load_prostate()


@pytest.fixture(scope="module")
def weibull_fits(data):
    return {t: fit(data, preset_spec(t), "weibull") for t in ("model1", "model2a", "model2b")}


@pytest.fixture
def say(capsys):
    def emit(n, ok, detail, soft=False):
        tag = "PASS" if ok else ("FAIL (soft gate)" if soft else "FAIL")
        with capsys.disabled():
            print(f"\nCRITERION {n}: {tag} - {detail}", flush=True)
    return emit


def within(value, target, tol):
    return abs(value - target) <= tol


def rel_within(value, target, rel):
    return abs(value / target - 1) <= rel


def test_criterion_01_distribution_ranking(data, say):
    t0 = time.perf_counter()
    fits = {d: fit(data, preset_spec("model2a"), d) for d in LAW_TAGS}
    aic = {d: f.aic for d, f in fits.items()}
    order = aic["weibull"] < aic["loglogistic"] < aic["lognormal"]
    w = fits["weibull"]
    roster = within(w.aic, 3260.219, 0.5) and within(w.bic, 3314.342, 0.5)
    ok = order and roster and all(f.converged for f in fits.values())
    say(1, ok, f"AIC weibull {aic['weibull']:.3f} < loglogistic {aic['loglogistic']:.3f} < lognormal "
               f"{aic['lognormal']:.3f}: {order}; weibull AIC {w.aic:.3f} (3260.219 +-0.5), BIC {w.bic:.3f} "
               f"(3314.342 +-0.5); {time.perf_counter() - t0:.1f}s")
    assert ok


def test_criterion_02_preset_ranking(weibull_fits, say):
    a = {t: f.aic for t, f in weibull_fits.items()}
    b = {t: f.bic for t, f in weibull_fits.items()}
    ok = a["model2a"] < a["model1"] < a["model2b"]
    say(2, ok, f"AIC 2A {a['model2a']:.3f}, 1 {a['model1']:.3f}, 2B {a['model2b']:.3f}; required "
               f"AIC(2A) < AIC(1) < AIC(2B). For reference AIC(2A) < AIC(2B) < AIC(1): "
               f"{a['model2a'] < a['model2b'] < a['model1']}; BIC(2A) < BIC(1) < BIC(2B): "
               f"{b['model2a'] < b['model1'] < b['model2b']}")
    assert ok


def test_criterion_03_unadjusted_comparison(data, say):
    t0 = time.perf_counter()
    _, p = logrank_test(data.time, data.event, data.z)
    curves = km_estimate(data.time, data.event, data.z)
    high, low = curves["1"](60.0), curves["0"](60.0)
    elapsed = time.perf_counter() - t0
    ok = within(p, 0.10, 0.02) and within(high, 0.35, 0.03) and within(low, 0.28, 0.03) and elapsed < 1
    say(3, ok, f"log-rank p {p:.4f} (0.10 +-0.02); S(60) high {high:.4f} (0.35 +-0.03), low {low:.4f} "
               f"(0.28 +-0.03); {elapsed:.3f}s")
    assert ok


def test_criterion_04_adjusted_treatment_effect(data, weibull_fits, say):
    f = weibull_fits["model2a"]
    row = f.coef_table()[f.index("rx")]
    ok = (within(row["time_ratio"], 0.582, 0.02) and within(row["tr_lower"], 0.306, 0.02)
          and within(row["tr_upper"], 1.110, 0.02))
    anchors = cli.treatment_effects(data, {("model2a", "weibull"): f, ("model1", "weibull"): weibull_fits["model1"]})
    recon = "; ".join(f"{r[0]} {r[2]}: TR {float(r[3]):.3f} [{float(r[4]):.3f}, {float(r[5]):.3f}]"
                      for r in anchors[1:])
    detail = (f"Model 2A rx TR {row['time_ratio']:.3f} [{row['tr_lower']:.3f}, {row['tr_upper']:.3f}] vs "
              f"0.582 [0.306, 1.110]. Reconciliation by anchor: {recon}")
    say(4, ok, detail, soft=True)
    if not ok:
        assert len(anchors) == 7  # reconciliation table is produced by the report path
        pytest.xfail("soft gate: target not reproduced under any anchor; " + detail)


def test_criterion_05_ite_direction(data, weibull_fits, say):
    f = weibull_fits["model2a"]
    refs = reference_values(data, ["age", "logsz"], "raw-mean")
    age = [ite_delta_ci(f, p).time_ratio for p in grid_profiles(f, "age", AGE_GRID, refs)]
    size = [ite_delta_ci(f, p).time_ratio for p in grid_profiles(f, "logsz", LOGSZ_GRID, refs)]
    dec = all(b < a for a, b in zip(age, age[1:]))
    inc = all(b > a for a, b in zip(size, size[1:]))
    say(5, dec and inc, f"age 50->84 strictly decreasing {dec} ({age[0]:.3f} -> {age[-1]:.3f}); logsz "
                        f"{LOGSZ_GRID[0]}->{LOGSZ_GRID[-1]} strictly increasing {inc} ({size[0]:.3f} -> {size[-1]:.3f})")
    assert dec and inc


def test_criterion_06_ite_magnitude(data, weibull_fits, say):
    f = weibull_fits["model2a"]
    refs = reference_values(data, ["age", "logsz"], "raw-mean")
    p_age = grid_profiles(f, "age", [50.0], refs)[0]
    p_sz = grid_profiles(f, "logsz", [4.248], refs)[0]
    d_age, d_sz = ite_delta_ci(f, p_age), ite_delta_ci(f, p_sz)
    boot, _ = bootstrap_ite(data, f.spec, "weibull", [p_age], BootstrapPlan(B=1000), original=f)
    b_age = boot[0]
    checks = {
        "age50 delta lower": (d_age.ci_lower, 1.931), "age50 delta upper": (d_age.ci_upper, 8.67),
        "age50 boot lower": (b_age.ci_lower, 2.007), "age50 boot upper": (b_age.ci_upper, 8.601),
        "logsz4.248 point": (d_sz.time_ratio, 1.887), "logsz4.248 delta lower": (d_sz.ci_lower, 1.164),
        "logsz4.248 delta upper": (d_sz.ci_upper, 3.059),
    }
    ok = all(rel_within(v, t, 0.10) for v, t in checks.values())
    detail = "raw-mean anchor (age 71.556, logsz log(mean sz + 1) = %.4f); " % refs["logsz"] + ", ".join(
        f"{k} {v:.3f} vs {t}" for k, (v, t) in checks.items())
    say(6, ok, detail, soft=True)
    if not ok:
        pytest.xfail("soft gate: " + detail)


def _random_km_instance(rng):
    n = int(rng.integers(2, 9))
    time_ = rng.integers(1, 6, n).astype(float)
    event = rng.uniform(size=n) < 0.7
    group = rng.integers(0, 2, n)
    return time_, event, group


def _brute(time_, event, group):
    surv, s = [], Fraction(1)
    o = e = v = Fraction(0)
    for t in sorted({t for t, ev in zip(time_, event) if ev}):
        n = sum(u >= t for u in time_)
        n1 = sum(u >= t and g == 1 for u, g in zip(time_, group))
        d = sum(u == t and ev for u, ev in zip(time_, event))
        d1 = sum(u == t and ev and g == 1 for u, ev, g in zip(time_, event, group))
        s *= 1 - Fraction(int(d), int(n))
        surv.append(s)
        o += int(d1)
        e += Fraction(int(d * n1), int(n))
        if n > 1:
            v += Fraction(int(d * n1 * (n - n1) * (n - d)), int(n * n * (n - 1)))
    return surv, o, e, v


def test_criterion_07_numerical_correctness(weibull_fits, say):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    n = 80
    X = np.column_stack([np.ones(n), rng.normal(size=(n, 2))])
    t = np.exp(1.0 + 0.3 * X[:, 1] + 0.4 * rng.gumbel(size=n))
    ev = (rng.uniform(size=n) < 0.7).astype(int)
    worst = 0.0
    for dist in LAW_TAGS:
        for _ in range(50):
            theta = np.concatenate([[1.0, 0.0, 0.0] + rng.normal(0, 0.4, 3), [rng.uniform(-1.2, 0.4)]])
            g = loglik_grad(theta, X, t, ev, dist)
            h = 1e-6 * np.maximum(1.0, np.abs(theta))
            fd = np.array([(loglik(theta + h[j] * e, X, t, ev, dist) - loglik(theta - h[j] * e, X, t, ev, dist))
                           / (2 * h[j]) for j, e in enumerate(np.eye(4))])
            worst = max(worst, float(np.max(np.abs(g - fd) / np.maximum(1.0, np.abs(fd)))))
    grad_ok = worst < 1e-6

    ic_err = 0.0
    for f in weibull_fits.values():
        aic, bic = information_criteria(f.loglik, f.k, f.n)
        ic_err = max(ic_err, abs((bic - aic) - f.k * (math.log(f.n) - 2)))
    ic_ok = ic_err <= 1e-9

    f = weibull_fits["model2a"]
    mc_err = 0.0
    draws = rng.multivariate_normal(f.theta, f.cov, size=200_000, method="cholesky")
    for prof in ({"age": 50.0, "logsz": 2.727}, {"age": 71.556, "logsz": 4.248}, {"age": 84.0, "logsz": 1.099}):
        r = ite_delta_ci(f, prof)
        lo, hi = np.exp(np.quantile(draws @ ite_gradient(f, prof), [0.025, 0.975]))
        mc_err = max(mc_err, abs(lo / r.ci_lower - 1), abs(hi / r.ci_upper - 1))
    mc_ok = mc_err < 0.01

    km_ok = True
    for _ in range(500):
        time_, event, group = _random_km_instance(rng)
        if not event.any():
            continue
        surv, o, e, v = _brute(time_, event, group)
        km = km_estimate(time_, event)
        km_ok &= bool(np.allclose(km.survival, [float(s) for s in surv], rtol=1e-12))
        if len(set(group)) == 2:
            chi2, _ = logrank_test(time_, event, group)
            exact = float((o - e) ** 2 / v) if v else 0.0
            km_ok &= math.isclose(chi2, exact, rel_tol=1e-10, abs_tol=1e-12)
    elapsed = time.perf_counter() - t0
    ok = grad_ok and ic_ok and mc_ok and km_ok and elapsed < 60
    say(7, ok, f"gradient max rel err {worst:.2e} (<1e-6); |bic-aic-k(ln n-2)| {ic_err:.1e}; delta vs MC "
               f"endpoint rel err {mc_err:.4f} (<0.01); KM/log-rank brute force {km_ok}; {elapsed:.1f}s")
    assert ok


def test_criterion_08_statistical_validity(say):
    t0 = time.perf_counter()
    truth = default_truth()
    mid_age, mid_sz = 71.556, 2.727
    profiles = [Profile({"age": 50.0, "logsz": mid_sz}, "age=50"), Profile({"age": 84.0, "logsz": mid_sz}, "age=84"),
                Profile({"age": mid_age, "logsz": 1.099}, "logsz=1.099"),
                Profile({"age": mid_age, "logsz": 4.248}, "logsz=4.248")]
    res = coverage_study(truth, 475, 1000, profiles, BootstrapPlan(B=500, seed=99), seed=2024,
                         workers=min(os.cpu_count() or 1, 8))
    d_ok = all(0.92 <= c <= 0.97 for c in res.delta_coverage)
    b_ok = all(0.91 <= c <= 0.97 for c in res.bootstrap_coverage)
    r_ok = res.recovery >= 0.99
    elapsed = time.perf_counter() - t0
    ok = d_ok and b_ok and r_ok
    say(8, ok, "delta coverage " + ", ".join(f"{p.label} {c:.3f}" for p, c in zip(profiles, res.delta_coverage))
        + " in [0.92, 0.97]; bootstrap B=500 coverage "
        + ", ".join(f"{p.label} {c:.3f}" for p, c in zip(profiles, res.bootstrap_coverage))
        + f" in [0.91, 0.97]; recovery within 3 SE {res.recovery:.4f} (>= 0.99); fit failures "
          f"{res.n_fit_failures}; censored {res.censored_fraction:.3f}; {elapsed:.0f}s")
    assert ok


def test_criterion_09_determinism(data, weibull_fits, say):
    t0 = time.perf_counter()
    f = weibull_fits["model2a"]
    refs = reference_values(data, ["age", "logsz"], "raw-mean")
    profs = grid_profiles(f, "age", [50.0, 70.0, 84.0], refs)
    outs = []
    for workers in (1, 2, 3):
        res, dist = bootstrap_ite(data, f.spec, "weibull", profs, BootstrapPlan(B=200, seed=17, workers=workers),
                                  original=f)
        outs.append((dist.to_csv(), [(r.ci_lower.hex(), r.ci_upper.hex()) for r in res]))
    boot_ok = outs[0] == outs[1] == outs[2]
    sim_ok = simulate_trial(default_truth(), 475, 5).audit_csv() == simulate_trial(default_truth(), 475, 5).audit_csv()
    prof = [Profile({"age": 60.0, "logsz": 2.7})]
    cov = [coverage_study(default_truth(), 475, 100, prof, seed=6, workers=w).to_dict() for w in (1, 2)]
    cov_ok = cov[0] == cov[1]
    elapsed = time.perf_counter() - t0
    ok = boot_ok and sim_ok and cov_ok and elapsed < 60
    say(9, ok, f"bootstrap replicate matrix and CIs identical for workers 1/2/3: {boot_ok}; simulated trial "
               f"identical: {sim_ok}; coverage study identical for workers 1/2: {cov_ok}; {elapsed:.1f}s")
    assert ok


def test_criterion_10_diagnostics_ranking(data, weibull_fits, say):
    t0 = time.perf_counter()
    sup = {t: residual_overlay(aft_residuals(f, data)).sup for t, f in weibull_fits.items()}
    best = min(sup, key=sup.get)
    ok = best == "model2a"
    say(10, ok, "sup |KM(z) - G(z)|: " + ", ".join(f"{k} {v:.4f}" for k, v in sup.items())
        + f"; best {best}; {time.perf_counter() - t0:.1f}s")
    assert ok
