"""Compiled inner loops for finite graphs.

Every random number comes from a counter-based splitmix64 stream keyed by
``(master key, replica index, ...)``.  Replica ``k`` therefore draws the same
numbers no matter how replicas are chunked across threads, which is what makes
results independent of the worker count.

Two engines live here:

``gillespie_batch``
    Fresh-randomness next-event simulation.  Each infected site carries the
    rate bound ``1 + lam * max_degree``; a proposal is a recovery with
    probability ``1 / bound``, otherwise an arrow along a uniformly chosen
    neighbor slot (null if the slot does not exist or the target is already
    infected).  Thinning keeps the law exact for irregular graphs.

``survival_levels``
    Replays a windowed graphical construction (per-site streams of recovery
    marks and arrows, arrows thinned by a uniform mark in ``[0, lam_max)``) and
    propagates, for every site, the smallest infection rate at which the site
    is infected.  The minimum over sites at the horizon is the replica's
    survival threshold: the process survives at ``lam`` iff ``lam`` exceeds it.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_SITE_TAG = np.uint64(0x5173)
_EDGE_TAG = np.uint64(0xED6E)
_TO_UNIT = 1.0 / 9007199254740992.0  # 2**-53

MASK64 = (1 << 64) - 1


@njit(inline="always")
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(inline="always")
def _key(a, b):
    return _mix(a ^ _mix(b + _GOLDEN))


@njit(inline="always")
def _uniform(state):
    """Advance ``state[0]`` and return a double in [0, 1)."""
    state[0] += _GOLDEN
    return float(_mix(state[0]) >> np.uint64(11)) * _TO_UNIT


@njit(inline="always")
def _exponential(state, rate):
    return -np.log(1.0 - _uniform(state)) / rate


def mix64(z: int) -> int:
    """Pure-Python twin of the compiled mixer, for deriving keys."""
    z = int(z) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def master_key(seed: int) -> np.uint64:
    return np.uint64(mix64(int(seed) ^ 0x243F6A8885A308D3))


@njit(nogil=True, cache=True)
def gillespie_batch(indptr, indices, lam, init_idx, horizon, obs_times, mkey, first, count, want_final):
    """Run replicas ``first .. first+count-1`` from ``init_idx``.

    Returns ``(sizes, final)``: infected counts at ``obs_times`` per replica and,
    when ``want_final``, the configuration at ``horizon`` as a boolean matrix.
    """
    n = indptr.shape[0] - 1
    n_obs = obs_times.shape[0]
    sizes = np.zeros((count, n_obs), dtype=np.int64)
    if want_final:
        final = np.zeros((count, n), dtype=np.bool_)
    else:
        final = np.zeros((0, 0), dtype=np.bool_)
    maxdeg = 0
    for i in range(n):
        d = indptr[i + 1] - indptr[i]
        if d > maxdeg:
            maxdeg = d
    bound = 1.0 + lam * maxdeg
    members = np.empty(n, dtype=np.int64)
    pos = np.empty(n, dtype=np.int64)
    state = np.zeros(1, dtype=np.uint64)
    for r in range(count):
        state[0] = _key(mkey, np.uint64(first + r))
        pos[:] = -1
        m = 0
        for s in init_idx:
            if pos[s] < 0:
                pos[s] = m
                members[m] = s
                m += 1
        t = 0.0
        oi = 0
        while m > 0:
            t += _exponential(state, m * bound)
            while oi < n_obs and obs_times[oi] < t:
                sizes[r, oi] = m
                oi += 1
            if t > horizon:
                break
            k = int(_uniform(state) * m)
            if k >= m:
                k = m - 1
            x = members[k]
            v = _uniform(state) * bound
            if v < 1.0:
                last = members[m - 1]
                members[k] = last
                pos[last] = k
                pos[x] = -1
                m -= 1
            else:
                j = int((v - 1.0) / lam)
                if j < indptr[x + 1] - indptr[x]:
                    y = indices[indptr[x] + j]
                    if pos[y] < 0:
                        pos[y] = m
                        members[m] = y
                        m += 1
        # remaining observation times see the final state (zero if extinct)
        while oi < n_obs:
            sizes[r, oi] = m
            oi += 1
        if want_final:
            for k in range(m):
                final[r, members[k]] = True
    return sizes, final


@njit(nogil=True, cache=True)
def _grow(times, src, slot, marks, need):
    cap = times.shape[0]
    if need <= cap:
        return times, src, slot, marks
    new_cap = max(need, 2 * cap)
    t2 = np.empty(new_cap, dtype=np.float64)
    s2 = np.empty(new_cap, dtype=np.int64)
    k2 = np.empty(new_cap, dtype=np.int64)
    m2 = np.empty(new_cap, dtype=np.float64)
    t2[:cap] = times
    s2[:cap] = src
    k2[:cap] = slot
    m2[:cap] = marks
    return t2, s2, k2, m2


@njit(nogil=True, cache=True)
def survival_levels(
    indptr, indices, removed, add_src, add_dst, add_key,
    lam_max, init_idx, horizon, window, mkey, first, count,
):
    """Survival thresholds for replicas ``first .. first+count-1``.

    ``indptr/indices`` is the adjacency of the shared base graph, ``removed``
    flags base arrow slots absent from the simulated graph, and
    ``add_src/add_dst/add_key`` list directed arrows of added edges with their
    stream keys.  Base-graph streams depend only on the base, so two graphs
    with the same base share every common mark and arrow.

    Returns ``inf`` for a replica that dies even at ``lam_max`` and ``-1`` when
    an initial site is never touched by a recovery mark.
    """
    n = indptr.shape[0] - 1
    n_add = add_src.shape[0]
    out = np.empty(count, dtype=np.float64)
    level = np.empty(n, dtype=np.float64)
    n_win = int(np.ceil(horizon / window))
    expected = 0.0
    for x in range(n):
        expected += 1.0 + lam_max * (indptr[x + 1] - indptr[x])
    expected += lam_max * n_add
    cap = int(2.0 * expected * window) + 64
    times = np.empty(cap, dtype=np.float64)
    src = np.empty(cap, dtype=np.int64)
    slot = np.empty(cap, dtype=np.int64)
    marks = np.empty(cap, dtype=np.float64)
    state = np.zeros(1, dtype=np.uint64)
    for r in range(count):
        rkey = _key(mkey, np.uint64(first + r))
        level[:] = np.inf
        for s in init_idx:
            level[s] = -1.0
        for w in range(n_win):
            alive = False
            for x in range(n):
                if level[x] < np.inf:
                    alive = True
                    break
            if not alive:
                break
            t0 = w * window
            t1 = min(t0 + window, horizon)
            e = 0
            for x in range(n):
                deg = indptr[x + 1] - indptr[x]
                rate = 1.0 + lam_max * deg
                state[0] = _key(_key(rkey ^ _SITE_TAG, np.uint64(x)), np.uint64(w))
                t = t0
                while True:
                    t += _exponential(state, rate)
                    if t >= t1:
                        break
                    v = _uniform(state) * rate
                    mk = _uniform(state) * lam_max
                    if e >= times.shape[0]:
                        times, src, slot, marks = _grow(times, src, slot, marks, e + 1)
                    times[e] = t
                    src[e] = x
                    if v < 1.0:
                        slot[e] = -1
                    else:
                        j = int((v - 1.0) / lam_max)
                        if j >= deg:
                            j = deg - 1
                        slot[e] = indptr[x] + j
                    marks[e] = mk
                    e += 1
            for a in range(n_add):
                state[0] = _key(_key(rkey ^ _EDGE_TAG, np.uint64(add_key[a])), np.uint64(w))
                t = t0
                while True:
                    t += _exponential(state, lam_max)
                    if t >= t1:
                        break
                    mk = _uniform(state) * lam_max
                    if e >= times.shape[0]:
                        times, src, slot, marks = _grow(times, src, slot, marks, e + 1)
                    times[e] = t
                    src[e] = add_src[a]
                    slot[e] = -2 - a
                    marks[e] = mk
                    e += 1
            order = np.argsort(times[:e], kind="mergesort")
            for q in order:
                x = src[q]
                k = slot[q]
                if k == -1:
                    level[x] = np.inf
                    continue
                lx = level[x]
                if lx == np.inf:
                    continue
                if k >= 0:
                    if removed[k]:
                        continue
                    y = indices[k]
                else:
                    y = add_dst[-2 - k]
                mk = marks[q]
                cand = lx if lx > mk else mk
                if cand < level[y]:
                    level[y] = cand
        best = np.inf
        for x in range(n):
            if level[x] < best:
                best = level[x]
        out[r] = best
    return out
