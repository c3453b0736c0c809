"""Vertex-transitive base graphs and finite edge perturbations.

Graphs are neighbor oracles: ``neighbors(x)`` is computed on demand, so the
infinite lattice and the infinite regular tree never materialize their vertex
sets.  Finite graphs (ring, torus, tree ball) additionally enumerate their
vertices in a canonical order, which the exact oracle and the compiled kernels
use as an index.

Vertex encodings
----------------
* ``Lattice(d=1)`` and ``Ring``: plain ``int``.
* ``Lattice(d>=2)`` and ``Torus``: ``tuple`` of ``d`` ints.
* ``Tree`` / ``TreeBall``: reduced word over edge labels ``0..degree-1`` as a
  tuple, no two consecutive labels equal.  Moving along label ``a`` from a word
  ending in ``a`` collapses back to the parent.
"""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Hashable, Iterable, Sequence

import numpy as np

Vertex = Hashable
Edge = tuple  # normalized (a, b) with a < b


class GraphError(ValueError):
    """Invalid graph parameters or an invalid perturbation."""


class DistinctEndpointWarning(UserWarning):
    """Added edges share endpoints; the overlay is still well defined."""


def normalize_edge(a: Vertex, b: Vertex) -> Edge:
    if a == b:
        raise GraphError(f"self-loop at {a!r} is not allowed")
    return (a, b) if a < b else (b, a)


class Graph:
    """Base class for neighbor oracles.

    Subclasses implement ``_neighbors`` and ``contains``.  Neighbor tuples are
    returned in a canonical order that never changes between calls.
    """

    finite: bool = False
    origin: Vertex = 0
    max_degree: int = 0

    # perturbation overlay relative to ``base``; empty for base graphs
    added_edges: frozenset = frozenset()
    removed_edges: frozenset = frozenset()

    @property
    def base(self) -> "Graph":
        return self

    def contains(self, x: Vertex) -> bool:
        raise NotImplementedError

    def _neighbors(self, x: Vertex) -> tuple:
        raise NotImplementedError

    def neighbors(self, x: Vertex) -> tuple:
        if not self.contains(x):
            raise GraphError(f"{x!r} is not a vertex of {self}")
        return self._neighbors(x)

    def degree_of(self, x: Vertex) -> int:
        return len(self.neighbors(x))

    def has_edge(self, a: Vertex, b: Vertex) -> bool:
        return self.contains(a) and self.contains(b) and b in self.neighbors(a)

    def vertices(self) -> list:
        raise GraphError(f"{self} is infinite; it has no vertex enumeration")

    @cached_property
    def index(self) -> dict:
        """Vertex -> position in ``vertices()``; finite graphs only."""
        return {v: i for i, v in enumerate(self.vertices())}

    @property
    def n_vertices(self) -> int:
        return len(self.vertices())

    def edges(self) -> set:
        """Normalized edge set; finite graphs only."""
        out = set()
        for v in self.vertices():
            for w in self.neighbors(v):
                out.add(normalize_edge(v, w))
        return out

    def to_csr(self) -> tuple[np.ndarray, np.ndarray]:
        """Adjacency of a finite graph as ``(indptr, indices)`` in vertex order."""
        idx = self.index
        indptr = [0]
        indices: list[int] = []
        for v in self.vertices():
            indices.extend(idx[w] for w in self.neighbors(v))
            indptr.append(len(indices))
        return np.asarray(indptr, dtype=np.int64), np.asarray(indices, dtype=np.int64)


@dataclass(frozen=True, eq=True)
class Lattice(Graph):
    d: int = 1

    def __post_init__(self):
        if self.d < 1:
            raise GraphError(f"lattice dimension must be >= 1, got {self.d}")

    @property
    def origin(self):
        return 0 if self.d == 1 else (0,) * self.d

    @property
    def max_degree(self):
        return 2 * self.d

    def contains(self, x) -> bool:
        if self.d == 1:
            return isinstance(x, (int, np.integer)) and not isinstance(x, bool)
        return isinstance(x, tuple) and len(x) == self.d and all(isinstance(c, (int, np.integer)) for c in x)

    def _neighbors(self, x):
        if self.d == 1:
            return (x - 1, x + 1)
        out = []
        for i in range(self.d):
            for s in (-1, 1):
                y = list(x)
                y[i] += s
                out.append(tuple(y))
        return tuple(out)


@dataclass(frozen=True, eq=True)
class Ring(Graph):
    L: int = 3
    finite = True

    def __post_init__(self):
        if self.L < 3:
            raise GraphError(f"ring length L must be >= 3, got {self.L}")

    @property
    def max_degree(self):
        return 2

    def contains(self, x) -> bool:
        return isinstance(x, (int, np.integer)) and not isinstance(x, bool) and 0 <= x < self.L

    def _neighbors(self, x):
        return ((x - 1) % self.L, (x + 1) % self.L)

    def vertices(self):
        return list(range(self.L))


@dataclass(frozen=True, eq=True)
class Torus(Graph):
    d: int = 2
    L: int = 3
    finite = True

    def __post_init__(self):
        if self.d < 1:
            raise GraphError(f"torus dimension must be >= 1, got {self.d}")
        if self.L < 3:
            raise GraphError(f"torus side L must be >= 3, got {self.L}")

    @property
    def origin(self):
        return (0,) * self.d

    @property
    def max_degree(self):
        return 2 * self.d

    def contains(self, x) -> bool:
        return isinstance(x, tuple) and len(x) == self.d and all(0 <= c < self.L for c in x)

    def _neighbors(self, x):
        out = []
        for i in range(self.d):
            for s in (-1, 1):
                y = list(x)
                y[i] = (y[i] + s) % self.L
                out.append(tuple(y))
        return tuple(out)

    def vertices(self):
        import itertools

        return list(itertools.product(range(self.L), repeat=self.d))


def _tree_step(word: tuple, label: int) -> tuple:
    if word and word[-1] == label:
        return word[:-1]
    return word + (label,)


@dataclass(frozen=True, eq=True)
class Tree(Graph):
    """Infinite ``degree``-regular tree."""

    degree: int = 3

    def __post_init__(self):
        if self.degree < 2:
            raise GraphError(f"tree degree must be >= 2, got {self.degree}")

    @property
    def origin(self):
        return ()

    @property
    def max_degree(self):
        return self.degree

    def contains(self, x) -> bool:
        if not isinstance(x, tuple):
            return False
        prev = None
        for a in x:
            if not (0 <= a < self.degree) or a == prev:
                return False
            prev = a
        return True

    def _neighbors(self, x):
        return tuple(_tree_step(x, a) for a in range(self.degree))


@dataclass(frozen=True, eq=True)
class TreeBall(Tree):
    """Ball of ``radius`` around the root of the regular tree.

    Edges leaving the ball are dropped, so leaves have degree 1.  The ball is
    not vertex-transitive; ``radius`` is a convergence knob.
    """

    radius: int = 1
    finite = True

    def __post_init__(self):
        super().__post_init__()
        if self.radius < 1:
            raise GraphError(f"tree ball radius must be >= 1, got {self.radius}")

    def contains(self, x) -> bool:
        return super().contains(x) and len(x) <= self.radius

    def _neighbors(self, x):
        return tuple(y for y in Tree._neighbors(self, x) if len(y) <= self.radius)

    def vertices(self):
        out = [()]
        frontier = [()]
        for _ in range(self.radius):
            nxt = []
            for w in frontier:
                for a in range(self.degree):
                    if not w or w[-1] != a:
                        nxt.append(w + (a,))
            out.extend(nxt)
            frontier = nxt
        return out


@dataclass(frozen=True)
class EdgePerturbation:
    """Finite lists of added and removed edges."""

    added: tuple = ()
    removed: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "added", tuple(tuple(e) for e in self.added))
        object.__setattr__(self, "removed", tuple(tuple(e) for e in self.removed))

    @property
    def distinct_endpoints(self) -> bool:
        ends = [v for e in self.added for v in e]
        return len(ends) == len(set(ends))

    @property
    def empty(self) -> bool:
        return not self.added and not self.removed


@dataclass(frozen=True, eq=False)
class PerturbedGraph(Graph):
    """A base graph with a finite overlay of added and removed edges."""

    base_graph: Graph = None
    added_edges: frozenset = field(default_factory=frozenset)
    removed_edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        extra: dict = {}
        for a, b in self.added_edges:
            extra.setdefault(a, []).append(b)
            extra.setdefault(b, []).append(a)
        for k in extra:
            extra[k].sort()
        object.__setattr__(self, "_extra", extra)
        bump = max((len(v) for v in extra.values()), default=0)
        object.__setattr__(self, "_max_degree", self.base_graph.max_degree + bump)

    def __eq__(self, other):
        return (
            isinstance(other, PerturbedGraph)
            and self.base_graph == other.base_graph
            and self.added_edges == other.added_edges
            and self.removed_edges == other.removed_edges
        )

    def __hash__(self):
        return hash((self.base_graph, self.added_edges, self.removed_edges))

    @property
    def base(self):
        return self.base_graph

    @property
    def finite(self):
        return self.base_graph.finite

    @property
    def origin(self):
        return self.base_graph.origin

    @property
    def max_degree(self):
        return self._max_degree

    def contains(self, x):
        return self.base_graph.contains(x)

    def _neighbors(self, x):
        nb = self.base_graph._neighbors(x)
        if self.removed_edges:
            nb = tuple(y for y in nb if normalize_edge(x, y) not in self.removed_edges)
        extra = self._extra.get(x)
        if extra:
            nb = nb + tuple(extra)
        return nb

    def vertices(self):
        return self.base_graph.vertices()

    @cached_property
    def index(self):
        return self.base_graph.index

    def __repr__(self):
        return (
            f"PerturbedGraph({self.base_graph!r}, added={sorted(self.added_edges)}, "
            f"removed={sorted(self.removed_edges)})"
        )


def make_graph(base: str, **params) -> Graph:
    """Build a base graph from its kind and size parameters.

    >>> make_graph("ring", L=4).neighbors(0)
    (3, 1)
    """
    kinds = {
        "lattice": (Lattice, {"d"}),
        "ring": (Ring, {"L"}),
        "torus": (Torus, {"d", "L"}),
        "tree": (Tree, {"degree"}),
        "tree_ball": (TreeBall, {"degree", "radius"}),
    }
    if base not in kinds:
        raise GraphError(f"unknown base graph kind {base!r}; expected one of {sorted(kinds)}")
    cls, allowed = kinds[base]
    unknown = set(params) - allowed
    if unknown:
        raise GraphError(f"unexpected parameters for {base}: {sorted(unknown)}")
    for k, v in params.items():
        if not isinstance(v, (int, np.integer)) or isinstance(v, bool):
            raise GraphError(f"{base}.{k} must be an integer, got {v!r}")
    return cls(**params)


def _as_vertex(g: Graph, v) -> Vertex:
    if isinstance(v, list):
        v = tuple(v)
    if not g.contains(v):
        raise GraphError(f"{v!r} is not a vertex of {g.base!r}")
    return v


def apply_perturbation(g: Graph, p: EdgePerturbation, strict: bool = False) -> Graph:
    """Return ``g`` with edges of ``p`` added and removed; ``g`` is unchanged.

    Added edges must be absent from ``g``; removed edges must be present.  When
    the added edges share endpoints a ``DistinctEndpointWarning`` is issued, or
    a ``GraphError`` in ``strict`` mode.
    """
    base = g.base
    added = set(g.added_edges)
    removed = set(g.removed_edges)
    seen = set()
    for a, b in p.added:
        e = normalize_edge(_as_vertex(g, a), _as_vertex(g, b))
        if e in seen or g.has_edge(*e):
            raise GraphError(f"added edge {e} is already present")
        seen.add(e)
        if e in removed:
            removed.discard(e)
        else:
            added.add(e)
    for a, b in p.removed:
        e = normalize_edge(_as_vertex(g, a), _as_vertex(g, b))
        if e in seen or not g.has_edge(*e):
            raise GraphError(f"removed edge {e} is not present")
        seen.add(e)
        if e in added:
            added.discard(e)
        else:
            removed.add(e)
    if not p.distinct_endpoints:
        msg = f"added edges {list(p.added)} share endpoints"
        if strict:
            raise GraphError(msg)
        warnings.warn(msg, DistinctEndpointWarning, stacklevel=2)
    if not added and not removed:
        return base
    return PerturbedGraph(base_graph=base, added_edges=frozenset(added), removed_edges=frozenset(removed))


def graph_distance(g: Graph, a: Vertex, b: Vertex, cap: int) -> int | None:
    """Shortest-path length from ``a`` to ``b``, or ``None`` if it exceeds ``cap``."""
    if cap < 0:
        raise GraphError(f"cap must be nonnegative, got {cap}")
    a, b = _as_vertex(g, a), _as_vertex(g, b)
    if a == b:
        return 0
    seen = {a}
    frontier = deque([(a, 0)])
    while frontier:
        x, dist = frontier.popleft()
        if dist >= cap:
            continue
        for y in g.neighbors(x):
            if y == b:
                return dist + 1
            if y not in seen:
                seen.add(y)
                frontier.append((y, dist + 1))
    return None


def is_edge_subgraph(lower: Graph, upper: Graph) -> bool:
    """True when every edge of ``lower`` is an edge of ``upper`` (shared base)."""
    if lower.base != upper.base:
        return False
    return lower.added_edges <= upper.added_edges and upper.removed_edges <= lower.removed_edges


def ball(g: Graph, center: Vertex, radius: int) -> set:
    """Vertices within graph distance ``radius`` of ``center``."""
    seen = {center}
    frontier = [center]
    for _ in range(radius):
        nxt = []
        for x in frontier:
            for y in g.neighbors(x):
                if y not in seen:
                    seen.add(y)
                    nxt.append(y)
        frontier = nxt
    return seen


def parse_graph(spec: dict) -> Graph:
    """Graph from a config mapping such as ``{base: ring, L: 200, added: [[0, 100]]}``."""
    spec = dict(spec)
    kind = spec.pop("base", None)
    if kind is None:
        raise GraphError("graph spec needs a 'base' entry")
    added = spec.pop("added", []) or []
    removed = spec.pop("removed", []) or []
    strict = bool(spec.pop("strict", False))
    g = make_graph(kind, **spec)
    p = EdgePerturbation(added=_vertex_pairs(added), removed=_vertex_pairs(removed))
    return apply_perturbation(g, p, strict=strict) if not p.empty else g


def _vertex_pairs(pairs: Sequence) -> tuple:
    out = []
    for pair in pairs:
        if len(pair) != 2:
            raise GraphError(f"edge {pair!r} must have two endpoints")
        out.append(tuple(tuple(v) if isinstance(v, list) else v for v in pair))
    return tuple(out)


def check_vertices(g: Graph, vs: Iterable) -> frozenset:
    return frozenset(_as_vertex(g, v) for v in vs)


class ExplicitGraph(Graph):
    """Small finite graph given by its vertex list and edge list.

    Not vertex-transitive in general; it exists so the exact oracle can be
    exercised on arbitrary small instances.
    """

    finite = True

    def __init__(self, vertices: Sequence, edges: Iterable):
        self._vertices = list(vertices)
        self._set = set(self._vertices)
        self._edges = frozenset(normalize_edge(a, b) for a, b in edges)
        adj: dict = {v: [] for v in self._vertices}
        for a, b in sorted(self._edges):
            if a not in self._set or b not in self._set:
                raise GraphError(f"edge {(a, b)} has an endpoint outside the vertex list")
            adj[a].append(b)
            adj[b].append(a)
        self._adj = {v: tuple(sorted(nb)) for v, nb in adj.items()}
        self.max_degree = max((len(nb) for nb in self._adj.values()), default=0)
        self.origin = self._vertices[0]

    def __eq__(self, other):
        return isinstance(other, ExplicitGraph) and self._vertices == other._vertices and self._edges == other._edges

    def __hash__(self):
        return hash((tuple(self._vertices), self._edges))

    def __repr__(self):
        return f"ExplicitGraph({self._vertices}, {sorted(self._edges)})"

    def contains(self, x):
        try:
            return x in self._set
        except TypeError:
            return False

    def _neighbors(self, x):
        return self._adj[x]

    def vertices(self):
        return list(self._vertices)
