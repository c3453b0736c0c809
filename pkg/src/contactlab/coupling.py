"""Basic coupling, conditioned initial pairs and the discrepancy bound.

A coupled pair ``(lower, upper)`` with ``lower <= upper`` sitewise is evolved
by replaying one graphical construction for both coordinates.  The initial
pairs differ at exactly one endpoint ``z`` of a perturbed edge: ``lower`` is a
configuration from the relaxed all-ones state of ``G'`` conditioned on ``z``
healthy and the other endpoint infected, ``upper`` is the same configuration
with ``z`` infected.  Run on ``G`` together with the contact process started
from ``{z}``, the discrepancy ``upper - lower`` never leaves the latter.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .construction import GraphicalConstruction
from .dynamics import ModelParams, ParameterError, Trajectory, replay
from .graphs import Graph, check_vertices, is_edge_subgraph
from .montecarlo import init_indices, map_replicas


class CouplingError(ValueError):
    """Coupling precondition violated (ordering or graph inclusion)."""


class SamplingError(RuntimeError):
    """Rejection sampling of a conditioned pair did not reach its acceptance floor."""

    def __init__(self, msg, diagnostics: dict):
        super().__init__(msg)
        self.diagnostics = diagnostics


class DominationViolation(AssertionError):
    """The discrepancy left the dominating process; indicates an engine bug."""


@dataclass
class CoupledPair:
    lower: frozenset
    upper: frozenset

    def __post_init__(self):
        self.lower = frozenset(self.lower)
        self.upper = frozenset(self.upper)
        if not self.lower <= self.upper:
            bad = sorted(self.lower - self.upper, key=repr)[:5]
            raise CouplingError(f"lower configuration exceeds upper at {bad}")

    @property
    def discrepancy(self) -> frozenset:
        return self.upper - self.lower


@dataclass(frozen=True)
class ConditioningEvent:
    """``D_z`` for edge ``(u, v)``: the ``z`` endpoint healthy, the other infected."""

    index: int
    side: str
    u: object
    v: object

    def __post_init__(self):
        if self.side not in ("u", "v"):
            raise ParameterError(f"side must be 'u' or 'v', got {self.side!r}")
        if self.u == self.v:
            raise ParameterError("conditioning edge endpoints must differ")

    @property
    def zero_end(self):
        return self.u if self.side == "u" else self.v

    @property
    def one_end(self):
        return self.v if self.side == "u" else self.u

    def holds(self, eta: frozenset) -> bool:
        return self.zero_end not in eta and self.one_end in eta


def conditioning_events(g: Graph, g_prime: Graph) -> list[ConditioningEvent]:
    """Both events for every edge in which ``g`` and ``g_prime`` differ.

    Edges added in ``g_prime`` come first, then removed ones, each sorted.
    """
    if g.base != g_prime.base:
        raise ParameterError("g and g_prime must share a base graph")
    added = (g_prime.added_edges - g.added_edges) | (g.removed_edges - g_prime.removed_edges)
    removed = (g.added_edges - g_prime.added_edges) | (g_prime.removed_edges - g.removed_edges)
    out = []
    for i, (u, v) in enumerate(sorted(added, key=repr) + sorted(removed, key=repr)):
        out.append(ConditioningEvent(i, "u", u, v))
        out.append(ConditioningEvent(i, "v", u, v))
    return out


@dataclass
class InitialPairSample:
    eta0: frozenset
    xi0: frozenset
    weight: float  # acceptance frequency, estimates mu_{G'}(D_z)
    weight_se: float
    attempts: int
    event: ConditioningEvent | None = None

    def __post_init__(self):
        if self.event is not None and (
            self.xi0 - self.eta0 != frozenset([self.event.zero_end]) or not self.eta0 <= self.xi0
        ):
            raise CouplingError("xi0 must equal eta0 plus the conditioning site")

    @property
    def pair(self) -> CoupledPair:
        return CoupledPair(self.eta0, self.xi0)


def sample_initial_pairs(
    g_prime: Graph,
    params: ModelParams,
    event: ConditioningEvent,
    relax_time: float,
    count: int = 1,
    truncation: Graph | None = None,
    seed: int = 0,
    batch: int = 1000,
    max_attempts: int = 100_000,
    floor: float = 1e-4,
    workers: int = 1,
) -> list[InitialPairSample]:
    """Draw ``count`` pairs from the relaxed all-ones state of ``g_prime``.

    Each attempt runs the all-ones configuration on the finite ``truncation``
    (``g_prime`` itself when finite) for ``relax_time`` and accepts if the
    conditioning event holds.  Raises ``SamplingError`` when fewer than
    ``count`` attempts are accepted within ``max_attempts`` or the acceptance
    rate is below ``floor``.
    """
    g = truncation if truncation is not None else g_prime
    if not g.finite:
        raise ParameterError("sampling initial pairs needs a finite truncation")
    if relax_time < 0:
        raise ParameterError(f"relax_time must be >= 0, got {relax_time}")
    if count < 1:
        raise ParameterError(f"count must be >= 1, got {count}")
    vs = g.vertices()
    zi, oi = g.index[event.zero_end], g.index[event.one_end]
    indptr, indices = g.to_csr()
    start = init_indices(g, vs)
    mkey = kernels.master_key(seed)
    grid = np.array([relax_time], dtype=float)
    accepted: list = []
    attempts = 0
    while len(accepted) < count and attempts < max_attempts:
        n = min(batch, max_attempts - attempts)
        first = attempts

        def run(a, c):
            return kernels.gillespie_batch(
                indptr, indices, float(params.lam), start, float(relax_time), grid, mkey, first + a, c, True
            )

        finals = np.concatenate([p[1] for p in map_replicas(run, n, workers)])
        hit = (~finals[:, zi]) & finals[:, oi]
        for row in finals[hit]:
            accepted.append(row)
        attempts += n
    rate = len(accepted) / attempts if attempts else 0.0
    diagnostics = {"attempts": attempts, "accepted": len(accepted), "acceptance_rate": rate, "floor": floor}
    if len(accepted) < count or rate < floor:
        raise SamplingError(
            f"accepted {len(accepted)} of {attempts} relaxations for {event}; need {count} at rate >= {floor}",
            diagnostics,
        )
    se = float(np.sqrt(rate * (1 - rate) / attempts))
    out = []
    for row in accepted[:count]:
        eta0 = frozenset(vs[i] for i in np.flatnonzero(row))
        out.append(InitialPairSample(eta0, eta0 | {event.zero_end}, rate, se, attempts, event))
    return out


def sample_initial_pair(g_prime, params, event, relax_time, truncation=None, **kw) -> InitialPairSample:
    return sample_initial_pairs(g_prime, params, event, relax_time, 1, truncation, **kw)[0]


@dataclass
class CoupledTrajectory:
    times: np.ndarray
    lower: Trajectory
    upper: Trajectory
    discrepancy_sizes: np.ndarray
    events_checked: int = 0


def _construction(g: Graph, params: ModelParams, construction, seed) -> GraphicalConstruction:
    if construction is None:
        return GraphicalConstruction(g.base, params.lam, seed=seed)
    return construction


def basic_couple(
    g_lower: Graph,
    g_upper: Graph,
    params: ModelParams,
    pair0: CoupledPair,
    horizon: float,
    observe_at: Sequence[float],
    construction: GraphicalConstruction | None = None,
    seed: int = 0,
    verify: bool = False,
) -> CoupledTrajectory:
    """Evolve ``pair0`` with shared marks and arrows.

    ``g_lower`` must be an edge subgraph of ``g_upper``; arrows on edges only
    in ``g_upper`` act on the upper coordinate alone.  Order is checked at the
    changed site after every event; with ``verify`` the discrepancy set is also
    recomputed from scratch and compared with the incremental one.
    """
    if not isinstance(pair0, CoupledPair):
        pair0 = CoupledPair(*pair0)
    if g_lower != g_upper and not is_edge_subgraph(g_lower, g_upper):
        raise CouplingError("g_lower must be an edge subgraph of g_upper")
    check_vertices(g_upper, pair0.upper)
    c = _construction(g_upper, params, construction, seed)
    disc = set(pair0.discrepancy)
    count = [0]

    def on_event(t, site, procs):
        lo, up = procs[0].infected, procs[1].infected
        if site in lo and site not in up:
            raise CouplingError(f"ordering lost at {site!r}, t={t}")
        if site in up and site not in lo:
            disc.add(site)
        else:
            disc.discard(site)
        count[0] += 1
        if verify and disc != up - lo:
            raise CouplingError(f"incremental discrepancy diverged at t={t}")

    sizes: list = []
    lower, upper = replay(
        c,
        [(g_lower, params.lam, pair0.lower), (g_upper, params.lam, pair0.upper)],
        horizon,
        observe_at,
        on_event=on_event,
        record_events=True,
    )
    sizes = np.array([len(u - l) for l, u in zip(lower.snapshots, upper.snapshots)], dtype=np.int64)
    return CoupledTrajectory(lower.times, lower, upper, sizes, count[0])


@dataclass
class DominationRun:
    times: np.ndarray
    lower: Trajectory
    upper: Trajectory
    dominator: Trajectory
    zeta_sizes: np.ndarray
    dominator_sizes: np.ndarray
    events_checked: int
    violations: int = 0
    zeta_snapshots: list = field(default_factory=list, repr=False)


def joint_domination_run(
    g: Graph,
    g_prime: Graph,
    params: ModelParams,
    event: ConditioningEvent,
    pair: InitialPairSample,
    horizon: float,
    observe_at: Sequence[float] | None = None,
    construction: GraphicalConstruction | None = None,
    seed: int = 0,
    strict: bool = True,
) -> DominationRun:
    """Run ``eta`` and ``xi`` on ``g`` with the process started from ``{z}``.

    All three share one construction.  After every event the changed site is
    checked for ``xi - eta <= A^{z}``; a violation raises
    ``DominationViolation`` (or is counted when ``strict`` is false).
    """
    z = event.zero_end
    if not event.holds(pair.eta0):
        raise CouplingError(f"eta0 is not in the conditioning event {event}")
    if pair.xi0 - pair.eta0 != frozenset([z]) or not pair.eta0 <= pair.xi0:
        raise CouplingError("xi0 must equal eta0 with the conditioning site infected")
    if g.base != g_prime.base:
        raise CouplingError("g and g_prime must share a base graph")
    check_vertices(g, pair.xi0)
    if observe_at is None:
        observe_at = [0.0, horizon]
    c = _construction(g, params, construction, seed)
    state = {"checked": 0, "violations": 0}

    def on_event(t, site, procs):
        eta, xi, dom = procs[0].infected, procs[1].infected, procs[2].infected
        state["checked"] += 1
        if (site in eta and site not in xi) or (site in xi and site not in eta and site not in dom):
            state["violations"] += 1
            if strict:
                raise DominationViolation(f"discrepancy at {site!r} outside A^{{{z!r}}} at t={t}")

    lower, upper, dom = replay(
        c,
        [(g, params.lam, pair.eta0), (g, params.lam, pair.xi0), (g, params.lam, frozenset([z]))],
        horizon,
        observe_at,
        on_event=on_event,
    )
    zetas = [u - l for l, u in zip(lower.snapshots, upper.snapshots)]
    for zeta, a in zip(zetas, dom.snapshots):
        if not zeta <= a:
            state["violations"] += 1
            if strict:
                raise DominationViolation("discrepancy outside dominator at an observation time")
    return DominationRun(
        times=lower.times,
        lower=lower,
        upper=upper,
        dominator=dom,
        zeta_sizes=np.array([len(zz) for zz in zetas], dtype=np.int64),
        dominator_sizes=dom.sizes,
        events_checked=state["checked"],
        violations=state["violations"],
        zeta_snapshots=zetas,
    )

