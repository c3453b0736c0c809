"""Exact finite-state computations for small graphs.

A configuration on a finite graph with vertices ``v_0 .. v_{n-1}`` is the
bitmask ``sum(2**i for infected v_i)``.  The generator is a sparse ``2**n``
square matrix with ``Q[s, s ^ (1 << i)] = c(v_i, s)`` and a negative row-sum
diagonal, so ``Q @ f`` is the generator applied to an observable ``f`` and
``p @ expm(tQ)`` is the law at time ``t`` started from ``p``.

The semigroup is evaluated by uniformization with an explicit Poisson tail
bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from .dynamics import ModelParams, ParameterError
from .graphs import Graph, normalize_edge

N_MAX = 12


class CapacityError(ValueError):
    """Graph too large for exhaustive state enumeration."""


@dataclass
class GeneratorMatrix:
    Q: sp.csr_matrix
    vertices: list
    index: dict
    lam: float

    @property
    def n(self) -> int:
        return len(self.vertices)

    @property
    def n_states(self) -> int:
        return 1 << self.n

    def state(self, config: Iterable) -> int:
        s = 0
        for v in config:
            s |= 1 << self.index[v]
        return s

    def config(self, s: int) -> frozenset:
        return frozenset(v for i, v in enumerate(self.vertices) if s >> i & 1)

    def occupation(self, x) -> np.ndarray:
        """The coordinate observable ``eta -> eta(x)``."""
        i = self.index[x]
        return ((np.arange(self.n_states) >> i) & 1).astype(float)

    def empty_on(self, A: Iterable) -> np.ndarray:
        """Observable ``1{eta(a) = 0 for every a in A}``."""
        mask = self.state(A)
        return ((np.arange(self.n_states) & mask) == 0).astype(float)

    def point_mass(self, config: Iterable) -> np.ndarray:
        p = np.zeros(self.n_states)
        p[self.state(config)] = 1.0
        return p


def _check_finite(g: Graph, n_max: int) -> list:
    if not g.finite:
        raise CapacityError(f"{g!r} is infinite")
    vs = g.vertices()
    if len(vs) > n_max:
        raise CapacityError(f"{len(vs)} vertices exceed the exact-oracle limit n_max={n_max}")
    return vs


def flip_rates(g: Graph, lam: float, vertices: list, index: dict) -> np.ndarray:
    """``rates[s, i]`` = flip rate of vertex ``i`` in state ``s``."""
    n = len(vertices)
    states = np.arange(1 << n)
    occ = (states[:, None] >> np.arange(n)[None, :]) & 1
    rates = np.empty((1 << n, n))
    for i, v in enumerate(vertices):
        nb = [index[y] for y in g.neighbors(v)]
        infected_nb = occ[:, nb].sum(axis=1) if nb else np.zeros(1 << n)
        rates[:, i] = np.where(occ[:, i] == 1, 1.0, lam * infected_nb)
    return rates


def enumerate_generator(g: Graph, params: ModelParams, n_max: int = N_MAX) -> GeneratorMatrix:
    vs = _check_finite(g, n_max)
    index = {v: i for i, v in enumerate(vs)}
    n = len(vs)
    rates = flip_rates(g, params.lam, vs, index)
    states = np.arange(1 << n)
    rows, cols, vals = [], [], []
    for i in range(n):
        nz = rates[:, i] > 0
        rows.append(states[nz])
        cols.append(states[nz] ^ (1 << i))
        vals.append(rates[nz, i])
    rows.append(states)
    cols.append(states)
    vals.append(-rates.sum(axis=1))
    Q = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(1 << n, 1 << n),
    )
    return GeneratorMatrix(Q=Q, vertices=vs, index=index, lam=params.lam)


def semigroup_apply(
    gen: GeneratorMatrix | sp.spmatrix,
    v: np.ndarray,
    t: float,
    tol: float = 1e-14,
    forward: bool = False,
    max_step: float = 30.0,
) -> np.ndarray:
    """``exp(tQ) v`` (observable) or ``v exp(tQ)`` (distribution, ``forward=True``).

    Uniformization at rate ``Lambda = max exit rate``; the time is split into
    steps with ``Lambda * dt <= max_step`` and each step's Poisson series is cut
    once the omitted mass is below ``tol / steps``.
    """
    if tol <= 0:
        raise ParameterError(f"tol must be > 0, got {tol}")
    if t < 0:
        raise ParameterError(f"t must be >= 0, got {t}")
    Q = gen.Q if isinstance(gen, GeneratorMatrix) else sp.csr_matrix(gen)
    out = np.array(v, dtype=float, copy=True)
    rate = float(-Q.diagonal().min()) if Q.shape[0] else 0.0
    if t == 0 or rate == 0:
        return out
    A = Q.T.tocsr() if forward else Q
    steps = max(1, math.ceil(rate * t / max_step))
    dt = t / steps
    step_tol = tol / steps
    mu = rate * dt
    for _ in range(steps):
        term = out
        weight = math.exp(-mu)
        acc = weight * term
        mass = weight
        k = 0
        while 1.0 - mass > step_tol and k < 10_000:
            k += 1
            term = term + (A @ term) / rate
            weight *= mu / k
            acc = acc + weight * term
            mass += weight
        out = acc
    return out


def duality_residual(g: Graph, params: ModelParams, eta: Iterable, A: Iterable, t: float, n_max: int = N_MAX) -> float:
    """``|P^eta[eta_t = 0 on A] - P^A[A_t disjoint from eta]|`` computed exactly."""
    gen = enumerate_generator(g, params, n_max)
    eta, A = frozenset(eta), frozenset(A)
    lhs = semigroup_apply(gen, gen.empty_on(A), t)[gen.state(eta)]
    rhs = semigroup_apply(gen, gen.empty_on(eta), t)[gen.state(A)]
    return abs(lhs - rhs)


@dataclass(frozen=True)
class EdgeChange:
    u: object
    v: object
    sign: int  # +1 added in g_prime, -1 removed in g_prime


def edge_changes(g: Graph, g_prime: Graph) -> list[EdgeChange]:
    """Edges of ``g_prime`` missing from ``g`` (+1) and vice versa (-1)."""
    if g.vertices() != g_prime.vertices():
        raise ParameterError("g and g_prime must have the same vertex set")
    e, e2 = g.edges(), g_prime.edges()
    out = [EdgeChange(a, b, +1) for a, b in sorted(e2 - e, key=repr)]
    out += [EdgeChange(a, b, -1) for a, b in sorted(e - e2, key=repr)]
    return out


def generator_decomposition_residual(
    g: Graph, g_prime: Graph, params: ModelParams, f: np.ndarray, n_max: int = N_MAX
) -> float:
    """Max over states of ``|L_G f - L_G' f - sum_w (c_G(w) - c_G'(w)) (f(eta_w) - f(eta))|``.

    The sum runs over the distinct endpoints of the changed edges.
    """
    changes = edge_changes(g, g_prime)
    gen = enumerate_generator(g, params, n_max)
    gen2 = enumerate_generator(g_prime, params, n_max)
    f = np.asarray(f, dtype=float)
    rates = flip_rates(g, params.lam, gen.vertices, gen.index)
    rates2 = flip_rates(g_prime, params.lam, gen.vertices, gen.index)
    states = np.arange(gen.n_states)
    corr = np.zeros(gen.n_states)
    ends = {gen.index[w] for c in changes for w in (c.u, c.v)}
    for i in sorted(ends):
        corr += (rates[:, i] - rates2[:, i]) * (f[states ^ (1 << i)] - f)
    return float(np.max(np.abs(gen.Q @ f - gen2.Q @ f - corr)))


def conditional(mu: np.ndarray, event: np.ndarray) -> tuple[float, np.ndarray]:
    """``(mu(D), mu( . | D))``; the conditional is all zeros when ``mu(D) = 0``."""
    w = float(mu[event].sum())
    cond = np.zeros_like(mu)
    if w > 0:
        cond[event] = mu[event] / w
    return w, cond


def conditioning_event(gen: GeneratorMatrix, zero_end, one_end) -> np.ndarray:
    """States with ``eta(zero_end) = 0`` and ``eta(one_end) = 1``."""
    states = np.arange(gen.n_states)
    i, j = gen.index[zero_end], gen.index[one_end]
    return (((states >> i) & 1) == 0) & (((states >> j) & 1) == 1)


def lemma_rate_terms(
    g: Graph, g_prime: Graph, params: ModelParams, mu: np.ndarray, x, t: float, n_max: int = N_MAX
) -> dict:
    """Both sides of the perturbed-generator rate identity at time ``t``.

    ``lhs``
        ``d/dt mu S_G(t) {eta(x) = 1}``, evaluated as ``<mu S_G(t), Q_G 1_x>``.
    ``invariance``
        ``<mu, Q_G' 1_x^t>`` with ``1_x^t = S_G(t) 1_x``; zero when ``mu`` is
        invariant for ``G'``.
    ``edge_terms``
        ``{(i, z): s_i lam mu(D_z^i) E_{mu_z^i}[1_x^t(eta) - 1_x^t(eta^{z_i})]}``
        where ``s_i`` is +1 for an added and -1 for a removed edge and
        ``D_z^i`` requires ``z_i`` healthy and the other endpoint infected.
    """
    changes = edge_changes(g, g_prime)
    gen = enumerate_generator(g, params, n_max)
    gen2 = enumerate_generator(g_prime, params, n_max)
    mu = np.asarray(mu, dtype=float)
    one_x = gen.occupation(x)
    f_t = semigroup_apply(gen, one_x, t)
    lhs = float(semigroup_apply(gen, mu, t, forward=True) @ (gen.Q @ one_x))
    invariance = float(mu @ (gen2.Q @ f_t))
    states = np.arange(gen.n_states)
    terms = {}
    for i, c in enumerate(changes):
        for side, z, other in (("u", c.u, c.v), ("v", c.v, c.u)):
            weight, cond = conditional(mu, conditioning_event(gen, z, other))
            flipped = f_t[states ^ (1 << gen.index[z])]
            terms[(i, side)] = c.sign * params.lam * weight * float(cond @ (f_t - flipped))
    return {"lhs": lhs, "invariance": invariance, "edge_terms": terms}


def lemma_rate_identity_residual(
    g: Graph, g_prime: Graph, params: ModelParams, mu: np.ndarray, x, t: float, n_max: int = N_MAX
) -> float:
    parts = lemma_rate_terms(g, g_prime, params, mu, x, t, n_max)
    rhs = parts["invariance"] + sum(parts["edge_terms"].values())
    return abs(parts["lhs"] - rhs)


def expected_infected_exact(g: Graph, params: ModelParams, A0: Iterable, t: float, n_max: int = N_MAX) -> float:
    gen = enumerate_generator(g, params, n_max)
    p = semigroup_apply(gen, gen.point_mass(A0), t, forward=True)
    pop = np.array([bin(s).count("1") for s in range(gen.n_states)], dtype=float)
    return float(p @ pop)


def survival_exact(g: Graph, params: ModelParams, A0: Iterable, t: float, n_max: int = N_MAX) -> float:
    """``P^{A0}(A_t nonempty)``."""
    gen = enumerate_generator(g, params, n_max)
    p = semigroup_apply(gen, gen.point_mass(A0), t, forward=True)
    return float(1.0 - p[0])


def density_exact(g: Graph, params: ModelParams, t: float, n_max: int = N_MAX) -> float:
    """Mean infected fraction at time ``t`` from the all-ones state."""
    vs = _check_finite(g, n_max)
    return expected_infected_exact(g, params, vs, t, n_max) / len(vs)
