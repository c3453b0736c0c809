"""Replica batches: seeding, chunking across workers, engine dispatch.

Replica ``k`` of a batch with master seed ``s`` always consumes the same random
numbers, so results do not depend on how replicas are split across workers.
Chunks are concatenated in replica order before any reduction.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .construction import vertex_hash
from .dynamics import ModelParams, ParameterError, simulate
from .graphs import Graph, normalize_edge


def replica_rng(seed: int, k: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, k])


def _chunks(total: int, workers: int) -> list[tuple[int, int]]:
    if workers <= 1 or total < 2:
        return [(0, total)]
    size = max(1, math.ceil(total / (4 * workers)))
    return [(a, min(size, total - a)) for a in range(0, total, size)]


def map_replicas(fn: Callable[[int, int], object], total: int, workers: int = 1) -> list:
    """Call ``fn(first, count)`` over consecutive chunks; results in chunk order."""
    chunks = _chunks(total, workers)
    if len(chunks) == 1:
        return [fn(*chunks[0])]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda c: fn(*c), chunks))


def init_indices(g: Graph, init: Iterable) -> np.ndarray:
    idx = g.index
    return np.array(sorted(idx[v] for v in init), dtype=np.int64)


def replica_sizes(
    g: Graph,
    params: ModelParams,
    init: Iterable,
    grid: Sequence[float],
    replicas: int,
    seed: int,
    workers: int = 1,
    want_final: bool = False,
):
    """Infected counts on ``grid`` for each replica, shape ``(replicas, len(grid))``.

    Finite graphs use the compiled kernel; infinite graphs the pure-Python
    engine.  With ``want_final`` the configurations at ``grid[-1]`` are also
    returned (boolean matrix in vertex order for finite graphs, list of sets
    otherwise).
    """
    if replicas < 1:
        raise ParameterError(f"replicas must be >= 1, got {replicas}")
    grid = np.asarray(grid, dtype=float)
    horizon = float(grid[-1])
    init = list(init)
    if g.finite:
        indptr, indices = g.to_csr()
        start = init_indices(g, init)
        mkey = kernels.master_key(seed)

        def run(first, count):
            return kernels.gillespie_batch(
                indptr, indices, float(params.lam), start, max(horizon, 0.0), grid, mkey, first, count, want_final
            )

        parts = map_replicas(run, replicas, workers)
        sizes = np.concatenate([p[0] for p in parts])
        if want_final:
            return sizes, np.concatenate([p[1] for p in parts])
        return sizes
    sizes = np.zeros((replicas, grid.size), dtype=np.int64)
    finals = []
    if horizon <= 0:
        sizes[:] = len(set(init))
        return (sizes, [frozenset(init)] * replicas) if want_final else sizes
    for k in range(replicas):
        tr = simulate(g, params, init, horizon, grid, seed=replica_rng(seed, k), record_events=False)
        sizes[k] = tr.sizes
        finals.append(tr.final)
    return (sizes, finals) if want_final else sizes


def added_edge_key(a, b) -> int:
    """Stream key of the directed arrow ``a -> b`` of an added edge."""
    ha = vertex_hash(a)
    hb = vertex_hash(b)
    z = kernels.mix64((ha[1] << 32) | ha[0])
    return kernels.mix64(z ^ ((hb[1] << 32) | hb[0]))


def overlay_arrays(g: Graph):
    """Kernel inputs describing ``g`` as its base plus an overlay."""
    base = g.base
    indptr, indices = base.to_csr()
    vs = base.vertices()
    removed = np.zeros(indices.size, dtype=np.bool_)
    if g.removed_edges:
        for i, x in enumerate(vs):
            for s in range(indptr[i], indptr[i + 1]):
                if normalize_edge(x, vs[indices[s]]) in g.removed_edges:
                    removed[s] = True
    idx = base.index
    src, dst, keys = [], [], []
    for a, b in sorted(g.added_edges):
        for x, y in ((a, b), (b, a)):
            src.append(idx[x])
            dst.append(idx[y])
            keys.append(added_edge_key(x, y))
    return (
        indptr,
        indices,
        removed,
        np.array(src, dtype=np.int64),
        np.array(dst, dtype=np.int64),
        np.array(keys, dtype=np.uint64),
    )


def survival_thresholds(
    g: Graph,
    init: Iterable,
    horizon: float,
    lam_max: float,
    replicas: int,
    seed: int,
    window: float = 1.0,
    workers: int = 1,
) -> np.ndarray:
    """Per-replica survival thresholds on a finite graph.

    Replica ``k`` survives to ``horizon`` at rate ``lam <= lam_max`` iff its
    threshold is strictly below ``lam``.  Graphs sharing a base share their
    constructions, so thresholds of ``g`` and a perturbation of ``g`` are
    computed with common random numbers.
    """
    if not g.finite:
        raise ParameterError("survival thresholds need a finite graph or truncation")
    if replicas < 1:
        raise ParameterError(f"replicas must be >= 1, got {replicas}")
    if not horizon > 0:
        raise ParameterError(f"horizon must be > 0, got {horizon}")
    if not lam_max > 0:
        raise ParameterError(f"lam_max must be > 0, got {lam_max}")
    arrays = overlay_arrays(g)
    start = init_indices(g, init)
    mkey = kernels.master_key(seed)

    def run(first, count):
        return kernels.survival_levels(*arrays, float(lam_max), start, float(horizon), float(window), mkey, first, count)

    return np.concatenate(map_replicas(run, replicas, workers))
