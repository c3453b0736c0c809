import math

import numpy as np
import pytest

from contactlab.dynamics import ModelParams, ParameterError
from contactlab.estimators import (
    BracketError,
    CriticalProtocol,
    FitError,
    compare_critical,
    critical_thresholds,
    estimate_critical,
    estimate_density,
    estimate_expected_infected_curve,
    estimate_survival,
    integrability_functional,
    survival_sweep,
)
from contactlab.graphs import EdgePerturbation, ExplicitGraph, Ring, apply_perturbation
from contactlab.montecarlo import replica_sizes, survival_thresholds
from contactlab.oracle import expected_infected_exact, survival_exact

PATH3 = ExplicitGraph([0, 1, 2], [(0, 1), (1, 2)])


def test_survival_lambda_zero():
    est = estimate_survival(Ring(10), ModelParams(0.0), None, 1.0, 10000, seed=1)
    assert est.within(math.exp(-1.0))
    assert estimate_survival(Ring(10), ModelParams(2.0), None, 0.0, 5, seed=1).value == 1.0


def test_survival_errors():
    with pytest.raises(ParameterError):
        estimate_survival(Ring(10), ModelParams(1.0), None, 1.0, 0, seed=1)
    with pytest.raises(ParameterError):
        estimate_survival(Ring(10), ModelParams(1.0), [], 1.0, 10, seed=1)


def test_survival_matches_oracle():
    est = estimate_survival(PATH3, ModelParams(1.0), [1], 2.0, 20000, seed=2)
    assert est.within(survival_exact(PATH3, ModelParams(1.0), [1], 2.0))


@pytest.mark.parametrize("t", [0.5, 1.5])
def test_estimators_match_oracle_ten_vertices(t):
    g = apply_perturbation(Ring(10), EdgePerturbation(added=[(0, 5)], removed=[(2, 3)]))
    p = ModelParams(1.5)
    n = 10**5
    assert estimate_survival(g, p, [0], t, n, seed=5).within(survival_exact(g, p, [0], t))
    grid = np.linspace(0.0, t, 7)
    curve = estimate_expected_infected_curve(g, p, [0], grid, n, seed=6, bootstrap=0)
    for i, s in enumerate(grid):
        assert curve.point(i).within(expected_infected_exact(g, p, [0], s))


def test_curve_lambda_zero():
    grid = np.linspace(0, 6, 25)
    # 3-sigma convention: 99.7% interval
    curve = estimate_expected_infected_curve(
        Ring(20), ModelParams(0.0), [0, 5, 10], grid, 40000, seed=3, confidence=0.997
    )
    assert curve.mean[0] == 3.0 and curve.std_error[0] == 0.0
    lo, hi = curve.fit.rate_ci
    assert lo <= 1.0 <= hi
    assert curve.fit.decaying
    for i, t in enumerate(grid):
        assert curve.point(i).within(3 * math.exp(-t), 4.0)


def test_curve_fit_errors():
    with pytest.raises(FitError):
        estimate_expected_infected_curve(Ring(10), ModelParams(0.0), None, [0.0, 1.0], 100, seed=1)
    with pytest.raises(FitError):
        estimate_expected_infected_curve(
            Ring(10), ModelParams(0.0), None, np.linspace(0, 4, 9), 100, seed=1, fit_window=(3.9, 4.0)
        )
    with pytest.raises(ParameterError):
        estimate_expected_infected_curve(Ring(10), ModelParams(0.0), None, [1.0, 0.5, 2.0], 100, seed=1)


@pytest.mark.parametrize("k", [1, 5])
def test_integrability_lambda_zero(k):
    g = Ring(20)
    grid = np.linspace(0, 10, 41)
    curve = estimate_expected_infected_curve(g, ModelParams(0.0), list(range(k)), grid, 20000, seed=8)
    est = integrability_functional(curve)
    assert not est.divergent
    assert abs(est.value - k) < 0.02 * k


def test_subcritical_ring_decays():
    curve = estimate_expected_infected_curve(Ring(100), ModelParams(1.0), None, np.arange(0, 31.0), 5000, seed=4)
    assert curve.fit.rate > 0 and curve.fit.rate_ci[0] > 0


def test_supercritical_flagged_divergent():
    curve = estimate_expected_infected_curve(Ring(100), ModelParams(3.0), None, np.arange(0, 16.0), 500, seed=4)
    est = integrability_functional(curve)
    assert est.divergent and math.isinf(est.value)


def test_density():
    assert estimate_density(Ring(10), ModelParams(1.0), 0.0, 10, seed=1).value == 1.0
    est = estimate_density(Ring(50), ModelParams(0.0), 1.0, 4000, seed=1)
    assert est.within(math.exp(-1.0))
    d = [estimate_density(Ring(200), ModelParams(2.0), T, 400, seed=2) for T in (10, 20, 40)]
    for a, b in zip(d, d[1:]):
        assert b.value <= a.value + 3 * math.hypot(a.std_error, b.std_error)


def test_thresholds_agree_with_direct_simulation():
    # survival proxy from thresholds vs the Gillespie kernel at fixed lambda (different random numbers)
    g = Ring(50)
    n = 4000
    thr = survival_thresholds(g, [0], 20.0, 2.5, n, seed=3)
    for lam in (1.2, 1.8, 2.4):
        p1 = float(np.mean(thr < lam))
        p2 = float(np.mean(replica_sizes(g, ModelParams(lam), [0], [20.0], n, seed=4)[:, 0] > 0))
        se = math.sqrt(p1 * (1 - p1) / n + p2 * (1 - p2) / n)
        assert abs(p1 - p2) <= 4 * se + 1e-12


def test_threshold_monotonicity():
    g = Ring(40)
    a = survival_thresholds(g, [0], 15.0, 2.5, 300, seed=9)
    b = survival_thresholds(g, [0, 20], 15.0, 2.5, 300, seed=9)
    assert np.all(b <= a)
    gp = apply_perturbation(g, EdgePerturbation(added=[(5, 25)]))
    c = survival_thresholds(gp, [0], 15.0, 2.5, 300, seed=9)
    assert np.all(c <= a)
    cut = apply_perturbation(g, EdgePerturbation(removed=[(0, 1)]))
    d = survival_thresholds(cut, [0], 15.0, 2.5, 300, seed=9)
    assert np.all(d >= a) and np.any(d > a)
    sweep = survival_sweep(a, np.linspace(0, 2.5, 26))
    qs = [q for _, q, _ in sweep]
    assert qs == sorted(qs)


def test_thresholds_worker_independent():
    g = Ring(40)
    a = survival_thresholds(g, [0], 10.0, 2.0, 100, seed=9, workers=1)
    b = survival_thresholds(g, [0], 10.0, 2.0, 100, seed=9, workers=4)
    assert np.array_equal(a, b)


def test_critical_bracket_error():
    p = CriticalProtocol(horizon=30.0, replicas=200, lam_lo=0.0, lam_hi=0.5, bootstrap=0)
    with pytest.raises(BracketError) as info:
        estimate_critical(Ring(50), p)
    assert info.value.proxy_hi < 0.05


def test_critical_lower_bracket_is_tiny():
    p = CriticalProtocol(horizon=30.0, replicas=500, lam_lo=0.0, lam_hi=3.0, bootstrap=0)
    thr = critical_thresholds(Ring(50), p)
    assert np.mean(thr < 0.0) == 0.0


def test_critical_reproducible_across_seeds():
    g = Ring(100)
    ests = [
        estimate_critical(g, CriticalProtocol(horizon=100.0, replicas=1000, seed=s, lam_hi=2.0, bootstrap=300))
        for s in (1, 2)
    ]
    a, b = ests
    assert a.ci_lo <= a.lambda_hat <= a.ci_hi
    assert abs(a.lambda_hat - b.lambda_hat) <= a.half_width + b.half_width
    assert a.protocol["horizon"] == 100.0 and a.protocol["n_vertices"] == 100


def test_compare_empty_perturbation_is_exactly_zero():
    g = Ring(60)
    p = CriticalProtocol(horizon=40.0, replicas=300, seed=3, lam_hi=2.5, bootstrap=100)
    cmp = compare_critical(g, apply_perturbation(g, EdgePerturbation()), p)
    assert cmp.delta == 0.0 and cmp.delta_ci_lo == 0.0 and cmp.delta_ci_hi == 0.0
    assert cmp.common_random_numbers and cmp.contains_zero


@pytest.mark.slow
def test_critical_scaling_drift_within_ci_width():
    # ring(200) at T=200 vs ring(400) at T=400; the drift is a systematic finite-size effect,
    # compared against the wider of the two interval widths at 500 replicas per scale
    a = estimate_critical(Ring(200), CriticalProtocol(horizon=200.0, replicas=500, seed=5, lam_hi=1.8, bootstrap=300))
    b = estimate_critical(Ring(400), CriticalProtocol(horizon=400.0, replicas=500, seed=5, lam_hi=1.8, bootstrap=300))
    width = max(a.ci_hi - a.ci_lo, b.ci_hi - b.ci_lo)
    assert abs(b.lambda_hat - a.lambda_hat) < width
