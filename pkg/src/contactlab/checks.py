"""Randomized exact-oracle suites shared by ``exact-check`` and the test suite.

Each suite draws small random instances from a seeded generator, evaluates a
residual exactly and reports the worst one against a tolerance.
"""

from __future__ import annotations

import itertools
import time
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .dynamics import ModelParams
from .graphs import DistinctEndpointWarning, EdgePerturbation, ExplicitGraph, apply_perturbation
from .oracle import (
    duality_residual,
    enumerate_generator,
    generator_decomposition_residual,
    lemma_rate_identity_residual,
    semigroup_apply,
)

LAMBDAS = (0.5, 1.0, 2.0)


@dataclass
class CheckReport:
    check_name: str
    instances: int
    max_residual: float
    tolerance: float
    passed: bool
    seconds: float = 0.0

    def to_json(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d


def random_graph(rng: np.random.Generator, n_min: int = 2, n_max: int = 5, p: float = 0.5) -> ExplicitGraph:
    n = int(rng.integers(n_min, n_max + 1))
    pairs = list(itertools.combinations(range(n), 2))
    edges = [e for e in pairs if rng.random() < p]
    return ExplicitGraph(range(n), edges)


def random_perturbed_pair(rng: np.random.Generator, n_max: int = 5, k_max: int = 3):
    """``(g, g_prime)`` on the same vertices differing in 1..k_max edges."""
    g = random_graph(rng, 2, n_max)
    n = g.n_vertices
    pairs = list(itertools.combinations(range(n), 2))
    k = int(rng.integers(1, min(k_max, len(pairs)) + 1))
    chosen = rng.choice(len(pairs), size=k, replace=False)
    edges = g.edges()
    added = [pairs[i] for i in chosen if pairs[i] not in edges]
    removed = [pairs[i] for i in chosen if pairs[i] in edges]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DistinctEndpointWarning)
        g_prime = apply_perturbation(g, EdgePerturbation(added=added, removed=removed))
    return g, g_prime


def _seed_rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, tag])


def _report(name, residuals, tol, t0) -> CheckReport:
    worst = float(max(residuals)) if residuals else 0.0
    return CheckReport(name, len(residuals), worst, tol, bool(worst < tol), time.perf_counter() - t0)


def decomposition_suite(instances: int = 200, seed: int = 0, n_max: int = 5, tol: float = 1e-12) -> CheckReport:
    """Generator split into the ``G'`` part plus endpoint corrections, all ``f = 1_x`` and a random ``f``."""
    rng = _seed_rng(seed, 1)
    t0 = time.perf_counter()
    res = []
    for _ in range(instances):
        g, gp = random_perturbed_pair(rng, n_max)
        params = ModelParams(float(rng.choice(LAMBDAS)))
        gen = enumerate_generator(g, params)
        fs = [gen.occupation(x) for x in gen.vertices] + [rng.normal(size=gen.n_states)]
        res.append(max(generator_decomposition_residual(g, gp, params, f) for f in fs))
    return _report("generator_decomposition", res, tol, t0)


def lemma_suite(instances: int = 100, seed: int = 0, n_max: int = 5, tol: float = 1e-8) -> CheckReport:
    rng = _seed_rng(seed, 2)
    t0 = time.perf_counter()
    res = []
    for _ in range(instances):
        g, gp = random_perturbed_pair(rng, n_max)
        params = ModelParams(float(rng.choice(LAMBDAS)))
        mu = rng.dirichlet(np.ones(2**g.n_vertices))
        x = int(rng.integers(g.n_vertices))
        t = float(rng.choice([0.0, 0.5, 2.0]))
        res.append(lemma_rate_identity_residual(g, gp, params, mu, x, t))
    return _report("lemma_rate_identity", res, tol, t0)


def _random_subset(rng, n) -> list:
    return [i for i in range(n) if rng.random() < 0.5]


def duality_suite(instances: int = 100, seed: int = 0, n_max: int = 5, tol: float = 1e-8) -> CheckReport:
    rng = _seed_rng(seed, 3)
    t0 = time.perf_counter()
    res = []
    for _ in range(instances):
        g = random_graph(rng, 1, n_max)
        params = ModelParams(float(rng.choice(LAMBDAS)))
        n = g.n_vertices
        t = float(rng.choice([0.3, 1.0, 3.0]))
        res.append(duality_residual(g, params, _random_subset(rng, n), _random_subset(rng, n), t))
    return _report("duality", res, tol, t0)


def semigroup_suite(instances: int = 50, seed: int = 0, n_max: int = 5, tol: float = 1e-10) -> CheckReport:
    """Chapman-Kolmogorov ``S(t+s) = S(t) S(s)`` and mass conservation."""
    rng = _seed_rng(seed, 4)
    t0 = time.perf_counter()
    res = []
    for _ in range(instances):
        g = random_graph(rng, 1, n_max)
        gen = enumerate_generator(g, ModelParams(float(rng.choice(LAMBDAS))))
        p = rng.dirichlet(np.ones(gen.n_states))
        t, s = (float(v) for v in rng.uniform(0.0, 3.0, size=2))
        joint = semigroup_apply(gen, p, t + s, forward=True)
        split = semigroup_apply(gen, semigroup_apply(gen, p, s, forward=True), t, forward=True)
        res.append(max(float(np.max(np.abs(joint - split))), abs(joint.sum() - 1.0)))
    return _report("semigroup", res, tol, t0)


def run_exact_suite(
    seed: int = 0,
    decomposition_instances: int = 200,
    lemma_instances: int = 100,
    duality_instances: int = 100,
    max_vertices: int = 5,
    decomposition_tolerance: float = 1e-12,
    lemma_tolerance: float = 1e-8,
    duality_tolerance: float = 1e-8,
    semigroup_tolerance: float = 1e-10,
) -> list[CheckReport]:
    return [
        decomposition_suite(decomposition_instances, seed, max_vertices, decomposition_tolerance),
        lemma_suite(lemma_instances, seed, max_vertices, lemma_tolerance),
        duality_suite(duality_instances, seed, max_vertices, duality_tolerance),
        semigroup_suite(50, seed, max_vertices, semigroup_tolerance),
    ]
