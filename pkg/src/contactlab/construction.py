"""Lazily generated Harris graphical construction.

The construction is a family of independent Poisson streams, one per
``(site, time window)`` for the base graph plus one per ``(directed added edge,
time window)``.  A site stream is the superposition of

* recovery marks at rate 1, and
* arrows to each base neighbor at rate ``lam_max``,

each arrow carrying a uniform mark in ``[0, lam_max)``.  A process with
infection rate ``lam <= lam_max`` uses exactly the arrows whose mark is below
``lam``, so one construction couples every rate in ``[0, lam_max]``.

Streams are pure functions of ``(seed, vertex encoding, window)`` and are
memoized, so any number of processes on graphs that share a base see identical
marks and arrows.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .graphs import Graph, GraphError

_SITE = 0
_EDGE = 1


def vertex_hash(v) -> tuple[int, int]:
    """Stable 64-bit hash of a canonical vertex encoding, as two 32-bit words."""
    h = int.from_bytes(hashlib.blake2b(repr(v).encode(), digest_size=8).digest(), "little")
    return h & 0xFFFFFFFF, h >> 32


@dataclass
class SiteStream:
    times: np.ndarray  # sorted, inside the window
    slots: np.ndarray  # -1 recovery, j >= 0 arrow to base neighbor j
    marks: np.ndarray


@dataclass
class GraphicalConstruction:
    base: Graph
    lam_max: float
    seed: int = 0
    window: float = 1.0
    _sites: dict = field(default_factory=dict, repr=False)
    _edges: dict = field(default_factory=dict, repr=False)
    _hashes: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.lam_max < 0:
            raise GraphError(f"lam_max must be >= 0, got {self.lam_max}")
        if self.window <= 0:
            raise GraphError(f"window must be > 0, got {self.window}")
        self.base = self.base.base

    def _hash(self, v):
        h = self._hashes.get(v)
        if h is None:
            h = self._hashes[v] = vertex_hash(v)
        return h

    def _rng(self, *words):
        return np.random.default_rng([self.seed & 0xFFFFFFFFFFFFFFFF, *words])

    def site_stream(self, x, k: int) -> SiteStream:
        """Recovery marks at ``x`` and arrows out of ``x`` in window ``k``."""
        key = (x, k)
        got = self._sites.get(key)
        if got is not None:
            return got
        deg = len(self.base.neighbors(x))
        rate = 1.0 + self.lam_max * deg
        rng = self._rng(_SITE, *self._hash(x), k)
        n = rng.poisson(rate * self.window)
        times = np.sort(k * self.window + self.window * rng.random(n))
        pick = rng.random(n) * rate
        slots = np.where(pick < 1.0, -1, np.minimum(((pick - 1.0) / max(self.lam_max, 1e-300)).astype(np.int64), deg - 1))
        marks = rng.random(n) * self.lam_max
        got = self._sites[key] = SiteStream(times, slots.astype(np.int64), marks)
        return got

    def edge_stream(self, x, y, k: int) -> SiteStream:
        """Arrows ``x -> y`` of an added edge in window ``k`` (slots are all 0)."""
        key = (x, y, k)
        got = self._edges.get(key)
        if got is not None:
            return got
        rng = self._rng(_EDGE, *self._hash(x), *self._hash(y), k)
        n = rng.poisson(self.lam_max * self.window)
        times = np.sort(k * self.window + self.window * rng.random(n))
        marks = rng.random(n) * self.lam_max
        got = self._edges[key] = SiteStream(times, np.zeros(n, dtype=np.int64), marks)
        return got

    def __len__(self):
        return len(self._sites) + len(self._edges)
