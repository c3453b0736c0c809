import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from contactlab.dynamics import ModelParams, ParameterError
from contactlab.graphs import EdgePerturbation, ExplicitGraph, Ring, apply_perturbation
from contactlab.montecarlo import replica_sizes
from contactlab.oracle import (
    CapacityError,
    conditional,
    density_exact,
    duality_residual,
    enumerate_generator,
    expected_infected_exact,
    generator_decomposition_residual,
    lemma_rate_identity_residual,
    lemma_rate_terms,
    semigroup_apply,
    survival_exact,
)

PATH3 = ExplicitGraph([0, 1, 2], [(0, 1), (1, 2)])


def test_single_vertex_generator():
    gen = enumerate_generator(ExplicitGraph([0], []), ModelParams(2.0))
    Q = gen.Q.toarray()
    assert Q[1, 0] == 1.0 and Q[0, 1] == 0.0
    assert Q[1, 1] == -1.0 and Q[0, 0] == 0.0


def test_edge_infection_rate():
    lam = 1.7
    gen = enumerate_generator(ExplicitGraph(["u", "v"], [("u", "v")]), ModelParams(lam))
    Q = gen.Q.toarray()
    assert Q[gen.state({"u"}), gen.state({"u", "v"})] == lam
    assert Q[gen.state({"u", "v"}), gen.state({"u"})] == 1.0


def test_generator_rows_and_sparsity():
    rng = np.random.default_rng(1)
    for _ in range(10):
        n = int(rng.integers(1, 7))
        edges = [(a, b) for a in range(n) for b in range(a + 1, n) if rng.random() < 0.5]
        gen = enumerate_generator(ExplicitGraph(range(n), edges), ModelParams(1.3))
        Q = gen.Q.toarray()
        assert np.allclose(Q.sum(axis=1), 0.0, atol=1e-12)
        off = Q - np.diag(np.diag(Q))
        assert off.min() >= 0
        assert ((off > 0).sum(axis=1) <= n).all()


def test_capacity():
    with pytest.raises(CapacityError):
        enumerate_generator(Ring(13), ModelParams(1.0))
    gen = enumerate_generator(Ring(13), ModelParams(1.0), n_max=13)
    assert gen.n_states == 2**13


def test_semigroup_identity_and_errors():
    gen = enumerate_generator(PATH3, ModelParams(1.0))
    v = np.arange(8, dtype=float)
    assert np.array_equal(semigroup_apply(gen, v, 0.0), v)
    with pytest.raises(ParameterError):
        semigroup_apply(gen, v, 1.0, tol=0.0)
    with pytest.raises(ParameterError):
        semigroup_apply(gen, v, -1.0)


def test_single_vertex_decay():
    gen = enumerate_generator(ExplicitGraph([0], []), ModelParams(1.0))
    for t in (0.1, 1.0, 5.0):
        p = semigroup_apply(gen, gen.point_mass([0]), t, forward=True)
        assert abs(p[1] - math.exp(-t)) < 1e-13


def test_semigroup_matches_ode_and_expm():
    gen = enumerate_generator(PATH3, ModelParams(1.0))
    Q = gen.Q.toarray()
    p0 = gen.point_mass([1])
    sol = solve_ivp(lambda t, p: Q.T @ p, (0, 0.7), p0, method="DOP853", rtol=1e-12, atol=1e-14)
    p = semigroup_apply(gen, p0, 0.7, forward=True)
    assert np.max(np.abs(p - sol.y[:, -1])) < 1e-8
    f = gen.occupation(0)
    assert np.max(np.abs(semigroup_apply(gen, f, 0.7) - expm(0.7 * Q) @ f)) < 1e-12


def test_long_time_splitting():
    g = Ring(6)
    gen = enumerate_generator(g, ModelParams(3.0))
    p = semigroup_apply(gen, gen.point_mass(g.vertices()), 40.0, forward=True)
    ref = expm(40.0 * gen.Q.toarray()).T @ gen.point_mass(g.vertices())
    assert abs(p.sum() - 1.0) < 1e-12
    assert np.max(np.abs(p - ref)) < 1e-9


def test_duality_examples():
    g = ExplicitGraph([0], [])
    p = ModelParams(1.0)
    assert duality_residual(g, p, [0], [], 1.0) == 0.0
    assert duality_residual(g, p, [0], [0], 0.8) < 1e-15
    rng = np.random.default_rng(4)
    for _ in range(20):
        edges = [(a, b) for a in range(4) for b in range(a + 1, 4) if rng.random() < 0.6]
        g = ExplicitGraph(range(4), edges)
        eta = [i for i in range(4) if rng.random() < 0.5]
        A = [i for i in range(4) if rng.random() < 0.5]
        for t in (0.3, 1.0, 3.0):
            assert duality_residual(g, ModelParams(1.2), eta, A, t) < 1e-8


def test_decomposition_identity_and_constants():
    g = Ring(5)
    gp = apply_perturbation(g, EdgePerturbation(added=[(0, 2)]))
    gen = enumerate_generator(g, ModelParams(1.0))
    f = np.random.default_rng(0).normal(size=gen.n_states)
    assert generator_decomposition_residual(g, g, ModelParams(1.0), f) == 0.0
    assert generator_decomposition_residual(g, gp, ModelParams(2.0), np.ones(gen.n_states)) < 1e-15


def test_decomposition_one_added_edge_all_sites():
    rng = np.random.default_rng(7)
    edges = [(a, b) for a in range(5) for b in range(a + 1, 5) if rng.random() < 0.5]
    g = ExplicitGraph(range(5), edges)
    missing = [(a, b) for a in range(5) for b in range(a + 1, 5) if (a, b) not in g.edges()]
    gp = apply_perturbation(g, EdgePerturbation(added=[missing[0]]))
    gen = enumerate_generator(g, ModelParams(1.0))
    for x in range(5):
        assert generator_decomposition_residual(g, gp, ModelParams(1.0), gen.occupation(x)) < 1e-12


def test_decomposition_vertex_mismatch():
    with pytest.raises(ParameterError):
        generator_decomposition_residual(Ring(4), Ring(5), ModelParams(1.0), np.zeros(16))


def test_lemma_isolated_vertices_hand_computation():
    lam = 1.3
    g = ExplicitGraph(["u", "v"], [])
    gp = ExplicitGraph(["u", "v"], [("u", "v")])
    gen = enumerate_generator(g, ModelParams(lam))
    mu = gen.point_mass({"u"})
    parts = lemma_rate_terms(g, gp, ModelParams(lam), mu, "v", 0.0)
    assert parts["lhs"] == 0.0
    assert abs(parts["invariance"] - lam) < 1e-15
    assert abs(sum(parts["edge_terms"].values()) + lam) < 1e-15
    assert lemma_rate_identity_residual(g, gp, ModelParams(lam), mu, "v", 0.0) < 1e-15


def test_lemma_empty_measure():
    g = Ring(4)
    gp = apply_perturbation(g, EdgePerturbation(added=[(0, 2)]))
    gen = enumerate_generator(g, ModelParams(1.0))
    parts = lemma_rate_terms(g, gp, ModelParams(1.0), gen.point_mass([]), 0, 0.5)
    assert parts["lhs"] == 0.0 and parts["invariance"] == 0.0
    assert all(v == 0.0 for v in parts["edge_terms"].values())


def test_lemma_removed_edges():
    rng = np.random.default_rng(3)
    g = Ring(5)
    gp = apply_perturbation(g, EdgePerturbation(removed=[(0, 1)], added=[(2, 4)]))
    for t in (0.0, 0.5, 2.0):
        mu = rng.dirichlet(np.ones(32))
        for x in range(5):
            assert lemma_rate_identity_residual(g, gp, ModelParams(0.8), mu, x, t) < 1e-8


def test_conditional_zero_mass():
    w, cond = conditional(np.array([1.0, 0.0]), np.array([False, True]))
    assert w == 0.0 and not cond.any()


def test_expected_infected_closed_forms():
    g = Ring(6)
    for t in (0.0, 0.4, 2.0):
        assert abs(expected_infected_exact(g, ModelParams(0.0), [0, 2, 4], t) - 3 * math.exp(-t)) < 1e-12
    assert expected_infected_exact(g, ModelParams(2.0), [0, 1], 0.0) == 2.0


def test_expected_infected_vs_monte_carlo():
    exact = expected_infected_exact(PATH3, ModelParams(1.0), [1], 1.0)
    n = 10**6
    s = replica_sizes(PATH3, ModelParams(1.0), [1], [1.0], n, seed=21)[:, 0]
    assert abs(s.mean() - exact) < 3 * s.std() / math.sqrt(n)


def test_density_nonincreasing_from_all_ones():
    g = Ring(6)
    d = [density_exact(g, ModelParams(2.0), t) for t in np.linspace(0, 10, 21)]
    assert d[0] == 1.0
    assert all(b <= a + 1e-12 for a, b in zip(d, d[1:]))


def test_survival_exact_single_site():
    assert abs(survival_exact(ExplicitGraph([0], []), ModelParams(1.0), [0], 1.0) - math.exp(-1)) < 1e-14
