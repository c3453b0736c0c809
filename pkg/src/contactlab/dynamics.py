"""Contact-process law and its two simulation engines.

Configurations are ``frozenset``s of infected vertices.  On a finite graph the
all-ones state is ``frozenset(g.vertices())``; on an infinite graph only finite
configurations are representable.

``simulate`` without a construction draws fresh randomness (next-event
sampling with a thinning bound).  With a ``GraphicalConstruction`` it replays
the shared marks and arrows, which is what couplings, additivity checks and the
dual process need.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .construction import GraphicalConstruction
from .graphs import Graph, check_vertices, normalize_edge


class ParameterError(ValueError):
    """Invalid simulation parameters."""


@dataclass(frozen=True)
class ModelParams:
    lam: float

    def __post_init__(self):
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ParameterError(f"lambda must be a finite number >= 0, got {self.lam}")


def transition_rate(g: Graph, x, eta: frozenset, params: ModelParams) -> float:
    """Flip rate of site ``x``: 1 if infected, else ``lam`` times infected neighbors."""
    if x in eta:
        return 1.0
    return params.lam * sum(1 for y in g.neighbors(x) if y in eta)


def flip(eta: frozenset, x) -> frozenset:
    return eta - {x} if x in eta else eta | {x}


def all_ones(g: Graph) -> frozenset:
    return frozenset(g.vertices())


@dataclass
class Trajectory:
    """Observations of one run at the requested times.

    ``snapshots[i]`` is the configuration at ``times[i]`` (right-continuous);
    ``events`` holds ``(time, site, kind)`` with kind ``"infect"`` or
    ``"recover"`` when event recording was requested.  ``ties`` counts events
    popped at exactly the time of their predecessor (a measure-zero anomaly,
    resolved by stream load order).
    """

    times: np.ndarray
    snapshots: list
    events: list = field(default_factory=list)
    final: frozenset = frozenset()
    ties: int = 0

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(s) for s in self.snapshots], dtype=np.int64)

    @property
    def survived(self) -> bool:
        return bool(self.final)


def _check_times(horizon: float, observe_at: Sequence[float]) -> np.ndarray:
    if not horizon > 0:
        raise ParameterError(f"horizon must be > 0, got {horizon}")
    obs = np.asarray(observe_at, dtype=float)
    if obs.ndim != 1 or obs.size == 0:
        raise ParameterError("observe_at must be a nonempty list of times")
    if np.any(np.diff(obs) < 0) or obs[0] < 0 or obs[-1] > horizon:
        raise ParameterError("observe_at must be nondecreasing and inside [0, horizon]")
    return obs


def _check_init(g: Graph, init) -> frozenset:
    init = check_vertices(g, init)
    return init


class _Uniforms:
    """Buffered uniform draws from a numpy Generator."""

    def __init__(self, rng: np.random.Generator, block: int = 4096):
        self.rng = rng
        self.block = block
        self.buf = rng.random(block)
        self.i = 0

    def __call__(self) -> float:
        if self.i == self.block:
            self.buf = self.rng.random(self.block)
            self.i = 0
        u = self.buf[self.i]
        self.i += 1
        return u


def _gillespie(g, params, init, horizon, obs, rng, record):
    lam = params.lam
    bound = 1.0 + lam * g.max_degree
    members = list(init)
    pos = {x: i for i, x in enumerate(members)}
    u = _Uniforms(rng)
    snaps: list = []
    events: list = []
    t = 0.0
    oi = 0
    while members:
        m = len(members)
        t += -math.log(1.0 - u()) / (m * bound)
        while oi < len(obs) and obs[oi] < t:
            snaps.append(frozenset(members))
            oi += 1
        if t > horizon:
            break
        k = min(int(u() * m), m - 1)
        x = members[k]
        v = u() * bound
        if v < 1.0:
            last = members.pop()
            if last != x:
                members[k] = last
                pos[last] = k
            del pos[x]
            if record:
                events.append((t, x, "recover"))
        else:
            nb = g.neighbors(x)
            j = int((v - 1.0) / lam)
            if j < len(nb):
                y = nb[j]
                if y not in pos:
                    pos[y] = len(members)
                    members.append(y)
                    if record:
                        events.append((t, y, "infect"))
    final = frozenset(members)
    while oi < len(obs):
        snaps.append(final)
        oi += 1
    return Trajectory(times=obs, snapshots=snaps, events=events, final=final)


@dataclass
class _Proc:
    graph: Graph
    lam: float
    infected: set
    snaps: list = field(default_factory=list)
    events: list = field(default_factory=list)


def replay(
    construction: GraphicalConstruction,
    runs: Sequence[tuple],
    horizon: float,
    observe_at: Sequence[float],
    reverse: bool = False,
    on_event: Callable | None = None,
    record_events: bool = False,
) -> list[Trajectory]:
    """Drive several processes with one graphical construction.

    ``runs`` is a list of ``(graph, lam, initial set)``; all graphs must share
    the construction's base graph.  An arrow ``x -> y`` acts on a process only
    if the edge belongs to that process's graph and the arrow's mark is below
    the process's ``lam``.

    With ``reverse=True`` the construction is read backwards from ``horizon``
    and arrows are followed against their direction: this is the dual process,
    and ``observe_at`` is then measured in dual time ``horizon - t``.

    ``on_event(time, site, procs)`` is called after every event that changed at
    least one process.
    """
    obs = _check_times(horizon, observe_at)
    base = construction.base
    procs = []
    for g, lam, init in runs:
        if g.base != base:
            raise ParameterError(f"graph {g!r} does not share the construction's base {base!r}")
        if lam > construction.lam_max:
            raise ParameterError(f"lambda {lam} exceeds the construction's lam_max {construction.lam_max}")
        procs.append(_Proc(g, lam, set(_check_init(g, init))))
    added_nb: dict = {}
    for p in procs:
        for a, b in p.graph.added_edges:
            added_nb.setdefault(a, set()).add(b)
            added_nb.setdefault(b, set()).add(a)

    w = construction.window
    n_win = int(math.ceil(horizon / w))
    oi = 0
    sign = -1.0 if reverse else 1.0

    def snapshot_until(clock):
        nonlocal oi
        while oi < len(obs) and obs[oi] < clock:
            for p in procs:
                p.snaps.append(frozenset(p.infected))
            oi += 1

    windows = range(n_win - 1, -1, -1) if reverse else range(n_win)
    ties = 0
    last = None
    for k in windows:
        if not any(p.infected for p in procs):
            break
        heap: list = []
        loaded: set = set()
        seq = 0

        def load(x, now):
            nonlocal seq
            if x in loaded:
                return
            loaded.add(x)
            st = construction.site_stream(x, k)
            nb = base.neighbors(x)
            for t, j, mk in zip(st.times, st.slots, st.marks):
                if t > horizon or (now is not None and sign * t <= sign * now):
                    continue
                target = None if j < 0 else nb[j]
                heap.append((sign * t, seq, x, target, int(j), mk))
                seq += 1
            for y in sorted(added_nb.get(x, ()), key=repr):
                es = construction.edge_stream(x, y, k)
                for t, mk in zip(es.times, es.marks):
                    if t > horizon or (now is not None and sign * t <= sign * now):
                        continue
                    heap.append((sign * t, seq, x, y, -2, mk))
                    seq += 1
            heapq.heapify(heap)

        def activate(x, now):
            load(x, now)
            if reverse:
                for y in base.neighbors(x):
                    load(y, now)
                for y in added_nb.get(x, ()):
                    load(y, now)

        for p in procs:
            for x in list(p.infected):
                activate(x, None)
        while heap:
            st, _, x, y, j, mk = heapq.heappop(heap)
            t = sign * st
            if st == last:
                ties += 1
            last = st
            snapshot_until(horizon - t if reverse else t)
            changed = None
            if j == -1:
                for p in procs:
                    if x in p.infected:
                        p.infected.discard(x)
                        changed = x
                        if record_events:
                            p.events.append((t, x, "recover"))
            else:
                e = normalize_edge(x, y)
                for p in procs:
                    if mk >= p.lam:
                        continue
                    if j == -2:
                        if e not in p.graph.added_edges:
                            continue
                    elif e in p.graph.removed_edges:
                        continue
                    src, dst = (y, x) if reverse else (x, y)
                    if src in p.infected and dst not in p.infected:
                        p.infected.add(dst)
                        changed = dst
                        if record_events:
                            p.events.append((t, dst, "infect"))
                if changed is not None:
                    activate(changed, t)
            if changed is not None and on_event is not None:
                on_event(horizon - t if reverse else t, changed, procs)
    snapshot_until(math.inf)
    return [
        Trajectory(times=obs, snapshots=p.snaps, events=p.events, final=frozenset(p.infected), ties=ties)
        for p in procs
    ]


def simulate(
    g: Graph,
    params: ModelParams,
    init: Iterable,
    horizon: float,
    observe_at: Sequence[float],
    construction: GraphicalConstruction | None = None,
    seed: int | np.random.Generator | None = None,
    record_events: bool = True,
) -> Trajectory:
    """Run the contact process on ``g`` from ``init`` up to ``horizon``.

    Without ``construction`` the run uses fresh randomness from ``seed``.
    """
    obs = _check_times(horizon, observe_at)
    init = _check_init(g, init)
    if construction is not None:
        return replay(construction, [(g, params.lam, init)], horizon, obs, record_events=record_events)[0]
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return _gillespie(g, params, init, horizon, obs, rng, record_events)


def dual_process(
    g: Graph,
    params: ModelParams,
    A0: Iterable,
    horizon: float,
    construction: GraphicalConstruction | None = None,
    observe_at: Sequence[float] | None = None,
    seed: int = 0,
) -> Trajectory:
    """Dual finite-set process: arrows reversed, time read from ``horizon`` down.

    With the same construction, ``{eta_T disjoint from A}`` for the forward run
    from ``eta`` coincides with ``{dual A_T disjoint from eta}`` path by path.
    """
    A0 = _check_init(g, A0)
    if not A0:
        raise ParameterError("A0 must be nonempty")
    if construction is None:
        construction = GraphicalConstruction(g.base, params.lam, seed=seed)
    if observe_at is None:
        observe_at = [horizon]
    return replay(construction, [(g, params.lam, A0)], horizon, observe_at, reverse=True, record_events=True)[0]
