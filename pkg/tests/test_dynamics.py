import math

import numpy as np
import pytest
from scipy import stats

from contactlab.construction import GraphicalConstruction
from contactlab.dynamics import (
    ModelParams,
    ParameterError,
    dual_process,
    flip,
    replay,
    simulate,
    transition_rate,
)
from contactlab.graphs import EdgePerturbation, ExplicitGraph, Lattice, Ring, apply_perturbation
from contactlab.montecarlo import replica_rng, replica_sizes
from contactlab.oracle import enumerate_generator, semigroup_apply


def test_params_validation():
    with pytest.raises(ParameterError):
        ModelParams(-0.1)
    with pytest.raises(ParameterError):
        ModelParams(float("nan"))


def test_transition_rates():
    r = Ring(6)
    p = ModelParams(1.5)
    eta = frozenset({0, 1})
    assert transition_rate(r, 0, eta, p) == 1.0
    assert transition_rate(r, 2, eta, p) == 1.5
    assert transition_rate(r, 5, eta, p) == 1.5
    assert transition_rate(r, 3, eta, p) == 0.0
    assert flip(eta, 0) == frozenset({1}) and flip(eta, 3) == eta | {3}


def test_zero_infected_is_absorbing():
    tr = simulate(Ring(10), ModelParams(3.0), [], 5.0, [0, 5.0], seed=1)
    assert tr.sizes.tolist() == [0, 0] and tr.events == []


def test_observation_validation():
    with pytest.raises(ParameterError):
        simulate(Ring(10), ModelParams(1.0), [0], 5.0, [6.0], seed=1)
    with pytest.raises(ParameterError):
        simulate(Ring(10), ModelParams(1.0), [0], 5.0, [2.0, 1.0], seed=1)
    with pytest.raises(Exception):
        simulate(Ring(10), ModelParams(1.0), [42], 5.0, [1.0], seed=1)


def test_lambda_zero_single_site_survival():
    # pure death: P(alive at t) = exp(-t)
    n = 20000
    s = replica_sizes(Ring(10), ModelParams(0.0), [0], [0.5, 1.0, 2.0], n, seed=3)
    for j, t in enumerate([0.5, 1.0, 2.0]):
        p = math.exp(-t)
        assert abs(s[:, j].mean() - p) < 4 * math.sqrt(p * (1 - p) / n)


def test_python_engine_lambda_zero():
    n = 3000
    alive = sum(simulate(Lattice(1), ModelParams(0.0), [0], 1.0, [1.0], seed=replica_rng(5, k)).survived for k in range(n))
    p = math.exp(-1.0)
    assert abs(alive / n - p) < 4 * math.sqrt(p * (1 - p) / n)


def _final_state_counts(finals, n):
    states = (finals.astype(np.int64) << np.arange(n)).sum(axis=1)
    return np.bincount(states, minlength=2**n)


def test_engines_match_exact_law():
    # 3-vertex path, lam=1, from the middle, t=1: chi-square of both engines against the oracle
    g = ExplicitGraph([0, 1, 2], [(0, 1), (1, 2)])
    params = ModelParams(1.0)
    gen = enumerate_generator(g, params)
    exact = semigroup_apply(gen, gen.point_mass([1]), 1.0, forward=True)
    n = 20000
    _, finals = replica_sizes(g, params, [1], [1.0], n, seed=9, want_final=True)
    obs = _final_state_counts(finals, 3)
    assert stats.chisquare(obs, exact * n).pvalue > 1e-3
    py = np.zeros(8, dtype=np.int64)
    for k in range(4000):
        fin = simulate(g, params, [1], 1.0, [1.0], seed=replica_rng(2, k), record_events=False).final
        py[sum(1 << v for v in fin)] += 1
    assert stats.chisquare(py, exact * 4000).pvalue > 1e-3


def test_replay_matches_exact_law():
    g = ExplicitGraph([0, 1, 2], [(0, 1), (1, 2)])
    params = ModelParams(1.0)
    gen = enumerate_generator(g, params)
    exact = semigroup_apply(gen, gen.point_mass([1]), 1.0, forward=True)
    counts = np.zeros(8, dtype=np.int64)
    n = 3000
    for k in range(n):
        c = GraphicalConstruction(g, 1.0, seed=k)
        fin = replay(c, [(g, 1.0, [1])], 1.0, [1.0])[0].final
        counts[sum(1 << v for v in fin)] += 1
    assert stats.chisquare(counts, exact * n).pvalue > 1e-3


def test_monotone_in_lambda_and_init_pathwise():
    r = Ring(30)
    for seed in range(20):
        c = GraphicalConstruction(r, 2.0, seed=seed)
        obs = np.linspace(0, 8, 17)
        lo, hi, big = replay(c, [(r, 1.0, [0]), (r, 2.0, [0]), (r, 2.0, [0, 7, 15])], 8.0, obs)
        for a, b, d in zip(lo.snapshots, hi.snapshots, big.snapshots):
            assert a <= b <= d


def test_additivity_pathwise():
    r = Ring(25)
    A, B = [0, 1], [12]
    for seed in range(20):
        c = GraphicalConstruction(r, 1.8, seed=seed)
        obs = np.linspace(0, 6, 13)
        a, b, ab = replay(c, [(r, 1.8, A), (r, 1.8, B), (r, 1.8, A + B)], 6.0, obs)
        for x, y, z in zip(a.snapshots, b.snapshots, ab.snapshots):
            assert x | y == z


def test_added_edges_only_help():
    r = Ring(30)
    gp = apply_perturbation(r, EdgePerturbation(added=[(0, 15), (5, 22)]))
    for seed in range(20):
        c = GraphicalConstruction(r, 2.0, seed=seed)
        lo, hi = replay(c, [(r, 2.0, [0]), (gp, 2.0, [0])], 6.0, np.linspace(0, 6, 7))
        assert all(a <= b for a, b in zip(lo.snapshots, hi.snapshots))


def test_replay_rejects_mismatch():
    c = GraphicalConstruction(Ring(10), 1.0)
    with pytest.raises(ParameterError):
        replay(c, [(Ring(12), 1.0, [0])], 1.0, [1.0])
    with pytest.raises(ParameterError):
        replay(c, [(Ring(10), 2.0, [0])], 1.0, [1.0])


def test_pathwise_duality():
    # forward from eta and dual from A on one construction:
    # {eta_T disjoint from A} == {dual A_T disjoint from eta}
    g = apply_perturbation(Ring(12), EdgePerturbation(added=[(0, 6)], removed=[(3, 4)]))
    rng = np.random.default_rng(0)
    mismatches = 0
    for seed in range(200):
        eta = frozenset(int(v) for v in np.flatnonzero(rng.random(12) < 0.4))
        A = frozenset(int(v) for v in np.flatnonzero(rng.random(12) < 0.3)) or frozenset([0])
        c = GraphicalConstruction(g.base, 1.5, seed=seed)
        fwd = replay(c, [(g, 1.5, eta)], 3.0, [3.0])[0].final
        dual = dual_process(g, ModelParams(1.5), A, 3.0, construction=c).final
        mismatches += (not (fwd & A)) != (not (dual & eta))
    assert mismatches == 0


def test_events_are_consistent_with_snapshots():
    r = Ring(15)
    tr = simulate(r, ModelParams(2.0), [0], 4.0, [0.0, 4.0], seed=11)
    state = {0}
    for t, site, kind in tr.events:
        assert 0 <= t <= 4.0
        if kind == "infect":
            assert site not in state
            state.add(site)
        else:
            assert site in state
            state.discard(site)
    assert frozenset(state) == tr.final == tr.snapshots[-1]
