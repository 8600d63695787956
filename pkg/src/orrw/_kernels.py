"""Hot loops: walk simulation, batch replicas, escape events, block scans.

Written in the numba-compatible subset of Python so the same source runs
compiled or interpreted (see ``_backend``). Neighbour index ``i`` of a vertex
means axis ``i // 2``, direction ``+1`` for even ``i`` and ``-1`` for odd.
Each visited vertex carries a bitmask whose bit ``i`` is set when the edge to
neighbour ``i`` is reinforced.
"""
from __future__ import annotations

import numpy as np

from ._backend import jit, prange
from ._prf import DOMAIN_TIME, domain_key, envelope_at, mix64, replica_seed, stream_at

_HASH_SEED = np.uint64(0x243F6A8885A308D3)
_HASH_MUL = np.uint64(0x9E3779B97F4A7C15)
_SHIFT20 = np.uint64(20)
_COORD_SHIFT = 1 << 40


# ---------------------------------------------------------------- vertex table

@jit
def _hash_vertex(v):
    h = _HASH_SEED
    for c in v:
        h = (h ^ np.uint64(c + _COORD_SHIFT)) * _HASH_MUL
    return mix64(h)


@jit
def _slot(keys, used, v):
    """Slot holding ``v``, or the empty slot where it would be inserted."""
    cap = used.shape[0]
    d = v.shape[0]
    i = np.int64(_hash_vertex(v) >> _SHIFT20) & (cap - 1)
    while used[i]:
        same = True
        for k in range(d):
            if keys[i, k] != v[k]:
                same = False
                break
        if same:
            return i
        i = (i + 1) & (cap - 1)
    return i


@jit
def _new_table(d, cap):
    keys = np.zeros((cap, d), dtype=np.int64)
    bits = np.zeros(cap, dtype=np.int64)
    visits = np.zeros(cap, dtype=np.int64)
    used = np.zeros(cap, dtype=np.uint8)
    return keys, bits, visits, used


@jit
def _grow(keys, bits, visits, used):
    d = keys.shape[1]
    nk, nb, nv, nu = _new_table(d, 2 * used.shape[0])
    for i in range(used.shape[0]):
        if used[i]:
            j = _slot(nk, nu, keys[i])
            nk[j, :] = keys[i, :]
            nb[j] = bits[i]
            nv[j] = visits[i]
            nu[j] = 1
    return nk, nb, nv, nu


@jit
def _initial_capacity(n_vertices):
    cap = 64
    while cap < 4 * n_vertices:
        cap *= 2
    return cap


@jit
def _seed_environment(keys, bits, used, env_lo, env_axis):
    """Mark the edges ``(env_lo[m], env_lo[m] + e_{env_axis[m]})`` reinforced.

    The table must be large enough for every endpoint; returns vertices added.
    """
    added = 0
    d = keys.shape[1]
    hi = np.empty(d, dtype=np.int64)
    for m in range(env_axis.shape[0]):
        ax = env_axis[m]
        s = _slot(keys, used, env_lo[m])
        if not used[s]:
            keys[s, :] = env_lo[m, :]
            used[s] = 1
            added += 1
        bits[s] |= np.int64(1) << (2 * ax)
        hi[:] = env_lo[m, :]
        hi[ax] += 1
        s = _slot(keys, used, hi)
        if not used[s]:
            keys[s, :] = hi
            used[s] = 1
            added += 1
        bits[s] |= np.int64(1) << (2 * ax + 1)
    return added


@jit
def choose_neighbor(mask, a, two_d, u):
    """Index whose half-open cumulative interval of weights ``1 + a * reinforced``
    contains ``u * total``."""
    total = 0.0
    for i in range(two_d):
        if (mask >> i) & 1:
            total += 1.0 + a
        else:
            total += 1.0
    x = u * total
    acc = 0.0
    for i in range(two_d):
        if (mask >> i) & 1:
            acc += 1.0 + a
        else:
            acc += 1.0
        if x < acc:
            return i
    return two_d - 1


# ---------------------------------------------------------------- single walk

@jit
def walk_path(a, start, steps, use_envelopes, key, offset, env_lo, env_axis):
    """Positions ``W(0..steps)`` of one ORRW.

    Time-stream mode uses ``U_{offset + t}`` for the step into ``W(t)``;
    envelope mode uses ``U_{v,n}`` with ``n`` the visit count of the current
    vertex ``v`` including the present visit.
    """
    d = start.shape[0]
    two_d = 2 * d
    out = np.empty((steps + 1, d), dtype=np.int64)
    keys, bits, visits, used = _new_table(d, _initial_capacity(2 * env_axis.shape[0] + 16))
    count = _seed_environment(keys, bits, used, env_lo, env_axis)
    pos = start.copy()
    s = _slot(keys, used, pos)
    if not used[s]:
        keys[s, :] = pos
        used[s] = 1
        count += 1
    visits[s] += 1
    out[0, :] = pos
    for t in range(1, steps + 1):
        if 2 * (count + 1) >= used.shape[0]:
            keys, bits, visits, used = _grow(keys, bits, visits, used)
            s = _slot(keys, used, pos)
        if use_envelopes:
            u = envelope_at(key, pos, visits[s])
        else:
            u = stream_at(key, offset + t)
        i = choose_neighbor(bits[s], a, two_d, u)
        ax = i >> 1
        if i & 1:
            pos[ax] -= 1
        else:
            pos[ax] += 1
        ns = _slot(keys, used, pos)
        if not used[ns]:
            keys[ns, :] = pos
            used[ns] = 1
            count += 1
        if not (bits[s] >> i) & 1:
            bits[s] |= np.int64(1) << i
            bits[ns] |= np.int64(1) << (i ^ 1)
        visits[ns] += 1
        s = ns
        out[t, :] = pos
    return out


# ---------------------------------------------------------------- replicas

@jit
def _replica(a, start, steps, key, record_times, snap, rng, maxd2):
    """One virgin-environment walk recording statistics at ``record_times``.

    Returns the last time ``s <= steps`` with ``W(s) == start``.
    """
    d = start.shape[0]
    two_d = 2 * d
    n_rec = record_times.shape[0]
    keys, bits, visits, used = _new_table(d, 64)
    pos = start.copy()
    s = _slot(keys, used, pos)
    keys[s, :] = pos
    used[s] = 1
    count = 1
    disp2 = 0
    best2 = 0
    last_return = 0
    j = 0
    while j < n_rec and record_times[j] == 0:
        snap[j, :] = pos
        rng[j] = count
        maxd2[j] = 0
        j += 1
    for t in range(1, steps + 1):
        if 2 * (count + 1) >= used.shape[0]:
            keys, bits, visits, used = _grow(keys, bits, visits, used)
            s = _slot(keys, used, pos)
        i = choose_neighbor(bits[s], a, two_d, stream_at(key, t))
        ax = i >> 1
        old = pos[ax] - start[ax]
        if i & 1:
            pos[ax] -= 1
        else:
            pos[ax] += 1
        new = pos[ax] - start[ax]
        disp2 += new * new - old * old
        if disp2 > best2:
            best2 = disp2
        if disp2 == 0:
            last_return = t
        ns = _slot(keys, used, pos)
        if not used[ns]:
            keys[ns, :] = pos
            used[ns] = 1
            count += 1
        if not (bits[s] >> i) & 1:
            bits[s] |= np.int64(1) << i
            bits[ns] |= np.int64(1) << (i ^ 1)
        s = ns
        while j < n_rec and record_times[j] == t:
            snap[j, :] = pos
            rng[j] = count
            maxd2[j] = best2
            j += 1
    return last_return


@jit(parallel=True)
def walk_batch(a, start, steps, master, n, record_times):
    """``n`` independent walks; replica ``i`` uses seed ``replica_seed(master, i)``.

    Returns ``(snap, rng, maxd2, last_return)`` with shapes ``(n, k, d)``,
    ``(n, k)``, ``(n, k)``, ``(n,)`` where ``k = len(record_times)``: position,
    number of distinct vertices and max squared displacement from ``start``
    at each recorded time, and the last visit time to ``start``.
    """
    d = start.shape[0]
    k = record_times.shape[0]
    snap = np.zeros((n, k, d), dtype=np.int64)
    rng = np.zeros((n, k), dtype=np.int64)
    maxd2 = np.zeros((n, k), dtype=np.int64)
    last = np.zeros(n, dtype=np.int64)
    for r in prange(n):
        key = domain_key(replica_seed(master, np.uint64(r)), DOMAIN_TIME)
        last[r] = _replica(a, start, steps, key, record_times, snap[r], rng[r], maxd2[r])
    return snap, rng, maxd2, last


@jit(parallel=True)
def paths_batch(a, start, steps, master, n):
    """Full paths of ``n`` replicas, shape ``(n, steps + 1, d)``."""
    d = start.shape[0]
    out = np.zeros((n, steps + 1, d), dtype=np.int64)
    env_lo = np.zeros((0, d), dtype=np.int64)
    env_axis = np.zeros(0, dtype=np.int64)
    for r in prange(n):
        key = domain_key(replica_seed(master, np.uint64(r)), DOMAIN_TIME)
        out[r] = walk_path(a, start, steps, False, key, 0, env_lo, env_axis)
    return out


# ---------------------------------------------------------------- escape events

@jit
def _linf_within(v, center, radius):
    for k in range(v.shape[0]):
        if abs(v[k] - center[k]) > radius:
            return False
    return True


@jit
def _escape_one(a, z, horizon, big_r, small_r, u, a_keys, a_used, a_level, key):
    """Run one virgin walk from ``z`` against the escape conditions.

    Returns the smallest level of the avoid set hit during ``[1, horizon]``
    (``n_levels`` sentinel when none is hit, ``-1`` when a box condition fails).
    """
    d = z.shape[0]
    two_d = 2 * d
    origin = np.zeros(d, dtype=np.int64)
    big = np.int64(1) << 60
    min_level = big
    keys, bits, visits, used = _new_table(d, 64)
    pos = z.copy()
    s = _slot(keys, used, pos)
    keys[s, :] = pos
    used[s] = 1
    count = 1
    r2 = big_r * big_r
    plus_from = 40 * small_r * small_r
    for t in range(1, horizon + 1):
        if 2 * (count + 1) >= used.shape[0]:
            keys, bits, visits, used = _grow(keys, bits, visits, used)
            s = _slot(keys, used, pos)
        i = choose_neighbor(bits[s], a, two_d, stream_at(key, t))
        ax = i >> 1
        if i & 1:
            pos[ax] -= 1
        else:
            pos[ax] += 1
        if not _linf_within(pos, origin, 4 * big_r):
            return -1
        if t >= r2 and not _linf_within(pos, origin, big_r):
            return -1
        if t >= plus_from and _linf_within(pos, u, 2 * small_r):
            return -1
        j = _slot(a_keys, a_used, pos)
        if a_used[j] and a_level[j] < min_level:
            min_level = a_level[j]
            if min_level == 0:
                return 0
        ns = _slot(keys, used, pos)
        if not used[ns]:
            keys[ns, :] = pos
            used[ns] = 1
            count += 1
        if not (bits[s] >> i) & 1:
            bits[s] |= np.int64(1) << i
            bits[ns] |= np.int64(1) << (i ^ 1)
        s = ns
    return min_level


@jit(parallel=True)
def escape_batch(a, z, horizon, big_r, small_r, u, avoid, avoid_level, master, n):
    """Escape outcomes of ``n`` replicas from ``z`` (see ``_escape_one``).

    ``avoid`` rows are points, ``avoid_level[m]`` the first nested set
    containing row ``m``; the walk escapes set ``j`` iff its result is ``> j``.
    """
    d = z.shape[0]
    cap = _initial_capacity(avoid.shape[0] + 1)
    a_keys, _, a_level, a_used = _new_table(d, cap)
    for m in range(avoid.shape[0]):
        j = _slot(a_keys, a_used, avoid[m])
        if not a_used[j]:
            a_keys[j, :] = avoid[m]
            a_used[j] = 1
            a_level[j] = avoid_level[m]
        elif avoid_level[m] < a_level[j]:
            a_level[j] = avoid_level[m]
    out = np.zeros(n, dtype=np.int64)
    for r in prange(n):
        key = domain_key(replica_seed(master, np.uint64(r)), DOMAIN_TIME)
        out[r] = _escape_one(a, z, horizon, big_r, small_r, u, a_keys, a_used, a_level, key)
    return out


# ---------------------------------------------------------------- block scans

@jit(parallel=True)
def relaxed_flags(positions, first_visit, query_times, r_min, r_max, kappa):
    """Whether each query time ``t`` is relaxed for radii ``r_min..r_max``.

    ``first_visit`` lists, in increasing order, the indices at which a new
    vertex is first visited. Distances from ``W(t)`` are bucketed once, so
    every radius is checked from one prefix sum.
    """
    nq = query_times.shape[0]
    out = np.ones(nq, dtype=np.bool_)
    if r_min > r_max:
        return out
    d = positions.shape[1]
    for q in prange(nq):
        t = query_times[q]
        hist = np.zeros(r_max + 1, dtype=np.int64)
        for m in range(first_visit.shape[0]):
            idx = first_visit[m]
            if idx > t:
                break
            dist = 0
            for k in range(d):
                g = abs(positions[idx, k] - positions[t, k])
                if g > dist:
                    dist = g
            if dist <= r_max:
                hist[dist] += 1
        cum = 0
        for r in range(r_max + 1):
            cum += hist[r]
            if r >= r_min and cum >= r ** kappa:
                out[q] = False
                break
    return out


@jit
def _max_block_count(points, n_pts, v, r, lo, hi):
    """Max of ``|points[:n_pts] & (u + [-r,r]^d)|`` over ``u`` in
    ``(v + [-r,r]^d) & [lo,hi]^d``; returns ``(count, u)``."""
    d = v.shape[0]
    # candidates: points within 2r of v can share a block with v
    local = np.empty((n_pts, d), dtype=np.int64)
    n_loc = 0
    for m in range(n_pts):
        ok = True
        for k in range(d):
            if abs(points[m, k] - v[k]) > 2 * r:
                ok = False
                break
        if ok:
            local[n_loc, :] = points[m, :]
            n_loc += 1
    u_lo = np.empty(d, dtype=np.int64)
    u_hi = np.empty(d, dtype=np.int64)
    for k in range(d):
        u_lo[k] = max(v[k] - r, lo)
        u_hi[k] = min(v[k] + r, hi)
        if u_lo[k] > u_hi[k]:
            return -1, u_lo
    best = -1
    best_u = u_lo.copy()
    u = u_lo.copy()
    while True:
        c = 0
        for m in range(n_loc):
            inside = True
            for k in range(d):
                if abs(local[m, k] - u[k]) > r:
                    inside = False
                    break
            if inside:
                c += 1
        if c > best:
            best = c
            best_u[:] = u
        k = 0
        while k < d:
            u[k] += 1
            if u[k] <= u_hi[k]:
                break
            u[k] = u_lo[k]
            k += 1
        if k == d:
            break
    return best, best_u


@jit
def first_heavy_block(points, incremental, r_lo, r_hi, center_lo, center_hi, kappa, strict):
    """Scan blocks ``u + [-r,r]^d`` with ``u`` in ``[center_lo, center_hi]^d``.

    With ``incremental`` the set grows one point at a time (``points`` in
    visiting order) and the first index ``m`` at which a block containing
    ``points[m]`` becomes heavy is reported; otherwise the whole set is used.
    Heavy means ``count >= r**kappa`` (``count > r**kappa`` when ``strict``).
    Returns ``(m, r, count, u)`` or ``m = -1`` when no block qualifies.
    """
    n = points.shape[0]
    d = points.shape[1]
    none_u = np.zeros(d, dtype=np.int64)
    if r_lo > r_hi:
        return -1, 0, 0, none_u
    hist = np.zeros(2 * r_hi + 1, dtype=np.int64)
    for m in range(n):
        n_pts = m + 1 if incremental else n
        v = points[m]
        for k in range(hist.shape[0]):
            hist[k] = 0
        for p in range(n_pts):
            dist = 0
            for k in range(d):
                g = abs(points[p, k] - v[k])
                if g > dist:
                    dist = g
            if dist <= 2 * r_hi:
                hist[dist] += 1
        cum = np.cumsum(hist)
        for r in range(r_lo, r_hi + 1):
            thr = r ** kappa
            if n_pts < thr or (strict and n_pts <= thr):
                break
            near = cum[2 * r]
            if near < thr or (strict and near <= thr):
                continue
            c, u = _max_block_count(points, n_pts, v, r, center_lo, center_hi)
            if c >= thr and (c > thr or not strict):
                return m, r, c, u
    return -1, 0, 0, none_u
