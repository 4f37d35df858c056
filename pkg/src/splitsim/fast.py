"""Compiled event loops for long runs.

Same semantics as :mod:`splitsim.engine` (ties, event order, preempt-resume)
but each policy is hand-written against incremental data structures:
array-backed binary heaps with lazy deletion, ring-buffer FIFO queues and
virtual time for processor sharing.  A job served alone on a server keeps
an absolute completion time instead of a remaining size.

Everything a kernel needs lives in numpy arrays, so a run can be fed in
chunks of arrivals and resumed after the job store is grown.
"""
from __future__ import annotations

import math
import time

import numpy as np
from numba import njit

from .engine import ConfigError, ExperimentConfig, SimResult, poisson_workload
from .policies import PolicySpec, check_compatible, parse_policy
from . import tailstats

INF = np.inf
EPS = 1e-12  # same zero-remaining rule as the Python engine

# float scalars
F_NOW, F_SUMT, F_SUMT2, F_PSVC, F_PIDLE, F_V, F_MINPS = range(7)
# int scalars
(I_LIVE, I_FREE, I_DONE, I_EVENTS, I_HA, I_HB, I_QHEAD, I_QCNT, I_POOL, I_LJF,
 I_STOLEN, I_BIG, I_PSK, I_PSTAG, I_CNT_A, I_CNT_B, I_LJFQ, I_LJFP, I_TAGGED,
 I_SEKACT, I_SEKBIG, I_MAXLIVE, I_SEKSKIP) = range(23)
# float params
P_CLASSD, P_TAG, P_LJF, P_D, P_EPS = range(5)
# int params
Q_WARMUP, Q_N, Q_PIDLE, Q_STEAL, Q_SMALLSRPT, Q_SEKORIG, Q_IDBASE = range(7)

# job states
S_FREE, S_WAIT, S_POOL, S_LJF, S_QUEUE, S_FCFS, S_PS, S_BIGWAIT, S_BIG, S_STOLEN = range(10)

STATUS_DONE, STATUS_FULL = 0, 1


# ---------------------------------------------------------------------------
# job store

@njit(cache=True)
def _alloc(J, sc_i, jid, arr, size):
    j_id, j_arr, j_size, j_rem, j_comp, j_ded, j_ver, j_ver2, j_flag, j_state, j_since, free = J
    top = sc_i[I_FREE]
    if top == 0:
        return -1
    top -= 1
    sc_i[I_FREE] = top
    slot = free[top]
    j_id[slot] = jid
    j_arr[slot] = arr
    j_size[slot] = size
    j_rem[slot] = size
    j_comp[slot] = INF
    j_ded[slot] = np.nan
    j_since[slot] = np.nan
    j_flag[slot] = 0
    j_state[slot] = S_FREE
    sc_i[I_LIVE] += 1
    if sc_i[I_LIVE] > sc_i[I_MAXLIVE]:
        sc_i[I_MAXLIVE] = sc_i[I_LIVE]
    return slot


@njit(cache=True)
def _rem_now(s, now, J):
    """Remaining work of a served job; exact while no time has passed since
    it went on its server, so ties with waiting jobs are not flipped."""
    if J[10][s] == now:
        return J[3][s]
    r = J[4][s] - now
    return r if r > 0.0 else 0.0


@njit(cache=True)
def _complete(slot, now, J, S, pf, pi, sc_f, sc_i):
    j_id, j_arr, j_size, j_rem, j_comp, j_ded, j_ver, j_ver2, j_flag, j_state, j_since, free = J
    grid, hist_t, hist_s, hist_c, edges, resp = S
    jid = j_id[slot]
    size = j_size[slot]
    t = now - j_arr[slot]
    if jid >= pi[Q_WARMUP]:
        b = np.searchsorted(grid, t)
        hist_t[b] += 1
        hist_s[np.searchsorted(grid, size)] += 1
        if pf[P_CLASSD] < INF:
            if size <= pf[P_CLASSD]:
                hist_c[0, b] += 1
            else:
                hist_c[1, b] += 1
        hist_c[2 + np.searchsorted(edges, size), b] += 1
        sc_f[F_SUMT] += t
        sc_f[F_SUMT2] += t * t
        if size >= pf[P_LJF]:
            sc_i[I_LJFQ] += 1
            ded = j_ded[slot]
            if not np.isnan(ded) and ded - j_arr[slot] <= math.sqrt(size):
                sc_i[I_LJFP] += 1
        if size >= pf[P_TAG]:
            sc_i[I_TAGGED] += 1
    if resp.shape[0] > 0:
        resp[jid - pi[Q_IDBASE]] = t
    j_id[slot] = -1
    j_state[slot] = S_FREE
    j_ver[slot] += 1
    j_ver2[slot] += 1
    free[sc_i[I_FREE]] = slot
    sc_i[I_FREE] += 1
    sc_i[I_LIVE] -= 1
    sc_i[I_DONE] += 1


@njit(cache=True)
def _is_tagged(slot, J, pf, pi):
    return J[2][slot] >= pf[P_TAG] and J[0][slot] >= pi[Q_WARMUP]


@njit(cache=True)
def _pidle(sc_f, dt, tagged_served, busy, n):
    if tagged_served > 0 and dt > 0.0:
        sc_f[F_PSVC] += dt * tagged_served
        sc_f[F_PIDLE] += dt * tagged_served * (n - busy) / (n - 1)


# ---------------------------------------------------------------------------
# heaps: (key, id) min-heaps with per-entry version stamps for lazy deletion

@njit(cache=True)
def _less(k1, i1, k2, i2):
    return k1 < k2 or (k1 == k2 and i1 < i2)


@njit(cache=True)
def _hpush(H, sc_i, which, key, jid, slot, ver):
    hk, hi, hs, hv = H
    pos = sc_i[which]
    sc_i[which] = pos + 1
    while pos > 0:
        parent = (pos - 1) >> 1
        if _less(key, jid, hk[parent], hi[parent]):
            hk[pos] = hk[parent]
            hi[pos] = hi[parent]
            hs[pos] = hs[parent]
            hv[pos] = hv[parent]
            pos = parent
        else:
            break
    hk[pos] = key
    hi[pos] = jid
    hs[pos] = slot
    hv[pos] = ver


@njit(cache=True)
def _hpop(H, sc_i, which):
    hk, hi, hs, hv = H
    size = sc_i[which] - 1
    sc_i[which] = size
    if size == 0:
        return
    key, jid, slot, ver = hk[size], hi[size], hs[size], hv[size]
    pos = 0
    while True:
        c = 2 * pos + 1
        if c >= size:
            break
        if c + 1 < size and _less(hk[c + 1], hi[c + 1], hk[c], hi[c]):
            c += 1
        if _less(hk[c], hi[c], key, jid):
            hk[pos] = hk[c]
            hi[pos] = hi[c]
            hs[pos] = hs[c]
            hv[pos] = hv[c]
            pos = c
        else:
            break
    hk[pos] = key
    hi[pos] = jid
    hs[pos] = slot
    hv[pos] = ver


@njit(cache=True)
def _htop(H, sc_i, which, j_id, vers):
    """Slot of the smallest valid entry (stale entries are discarded), or -1."""
    hk, hi, hs, hv = H
    while sc_i[which] > 0:
        s = hs[0]
        if j_id[s] == hi[0] and vers[s] == hv[0]:
            return s
        _hpop(H, sc_i, which)
    return -1


@njit(cache=True)
def _hcompact(H, sc_i, which, j_id, vers):
    hk, hi, hs, hv = H
    size = sc_i[which]
    keep = 0
    for k in range(size):
        s = hs[k]
        if j_id[s] == hi[k] and vers[s] == hv[k]:
            hk[keep] = hk[k]
            hi[keep] = hi[k]
            hs[keep] = hs[k]
            hv[keep] = hv[k]
            keep += 1
    # rebuild by re-pushing in place
    sc_i[which] = 0
    for k in range(keep):
        _hpush(H, sc_i, which, hk[k], hi[k], hs[k], hv[k])


@njit(cache=True)
def _hclear(H, sc_i, which):
    sc_i[which] = 0


# ---------------------------------------------------------------------------
# SRPT pool: up to ``m`` jobs served at rate 1, the rest in heap A by remaining

@njit(cache=True)
def _pool_serve(slot, now, J, pool, sc_i):
    J[4][slot] = now + J[3][slot]
    J[10][slot] = now
    J[9][slot] = S_POOL
    pool[sc_i[I_POOL]] = slot
    sc_i[I_POOL] += 1


@njit(cache=True)
def _pool_wait(slot, J, HA, sc_i):
    J[6][slot] += 1
    J[9][slot] = S_WAIT
    _hpush(HA, sc_i, I_HA, J[3][slot], J[0][slot], slot, J[6][slot])


@njit(cache=True)
def _pool_worst(now, J, pool, sc_i):
    """Index in ``pool`` of the served job with the largest (remaining, id)."""
    j_id = J[0]
    best = -1
    br = -INF
    bid = -1
    for k in range(sc_i[I_POOL]):
        s = pool[k]
        r = _rem_now(s, now, J)
        if r > br or (r == br and j_id[s] > bid):
            best, br, bid = k, r, j_id[s]
    return best


@njit(cache=True)
def _pool_unserve(k, now, J, pool, sc_i):
    """Take pool[k] off its server; returns its slot with remaining updated."""
    s = pool[k]
    J[3][s] = _rem_now(s, now, J)
    J[4][s] = INF
    last = sc_i[I_POOL] - 1
    pool[k] = pool[last]
    sc_i[I_POOL] = last
    return s


@njit(cache=True)
def _pool_add(slot, now, m, J, pool, HA, sc_i):
    if sc_i[I_POOL] < m:
        _pool_serve(slot, now, J, pool, sc_i)
        return
    k = _pool_worst(now, J, pool, sc_i)
    if k >= 0:
        w = pool[k]
        rw = _rem_now(w, now, J)
        if _less(J[3][slot], J[0][slot], rw, J[0][w]):
            _pool_unserve(k, now, J, pool, sc_i)
            _pool_wait(w, J, HA, sc_i)
            _pool_serve(slot, now, J, pool, sc_i)
            return
    _pool_wait(slot, J, HA, sc_i)


@njit(cache=True)
def _pool_fill(now, m, J, pool, HA, sc_i):
    while sc_i[I_POOL] < m:
        s = _htop(HA, sc_i, I_HA, J[0], J[6])
        if s < 0:
            return
        _hpop(HA, sc_i, I_HA)
        J[6][s] += 1
        _pool_serve(s, now, J, pool, sc_i)


@njit(cache=True)
def _pool_shrink(now, m, J, pool, HA, sc_i):
    n_pre = 0
    while sc_i[I_POOL] > m:
        k = _pool_worst(now, J, pool, sc_i)
        s = _pool_unserve(k, now, J, pool, sc_i)
        _pool_wait(s, J, HA, sc_i)
        n_pre += 1
    return n_pre


@njit(cache=True)
def _pool_next(J, pool, sc_i):
    """(time, id, index) of the earliest completion in the pool."""
    bt = INF
    bid = -1
    bk = -1
    for k in range(sc_i[I_POOL]):
        s = pool[k]
        c = J[4][s]
        if c < bt or (c == bt and J[0][s] < bid):
            bt, bid, bk = c, J[0][s], k
    return bt, bid, bk


@njit(cache=True)
def _pool_tagged(J, pool, sc_i, pf, pi):
    c = 0
    for k in range(sc_i[I_POOL]):
        if _is_tagged(pool[k], J, pf, pi):
            c += 1
    return c


# ---------------------------------------------------------------------------
# FIFO ring buffer

@njit(cache=True)
def _q_push_back(Q, sc_i, slot):
    cap = Q.shape[0]
    Q[(sc_i[I_QHEAD] + sc_i[I_QCNT]) % cap] = slot
    sc_i[I_QCNT] += 1


@njit(cache=True)
def _q_push_front(Q, sc_i, slot):
    cap = Q.shape[0]
    h = (sc_i[I_QHEAD] - 1) % cap
    Q[h] = slot
    sc_i[I_QHEAD] = h
    sc_i[I_QCNT] += 1


@njit(cache=True)
def _q_pop(Q, sc_i):
    if sc_i[I_QCNT] == 0:
        return -1
    h = sc_i[I_QHEAD]
    s = Q[h]
    sc_i[I_QHEAD] = (h + 1) % Q.shape[0]
    sc_i[I_QCNT] -= 1
    return s


# ---------------------------------------------------------------------------
# kernels.  Each consumes arrivals[start:] and returns (status, next index).

@njit(cache=True)
def _fcfs(arr_t, sizes, id0, final, J, HA, HB, Q, srv, S, pf, pi, sc_f, sc_i):
    n = pi[Q_N]
    j_id, j_comp = J[0], J[4]
    now = sc_f[F_NOW]
    m = arr_t.shape[0]
    i = 0
    while True:
        bt = INF
        bid = -1
        bs = -1
        for s in range(n):
            sl = srv[s]
            if sl >= 0:
                c = j_comp[sl]
                if c < bt or (c == bt and j_id[sl] < bid):
                    bt, bid, bs = c, j_id[sl], s
        if i < m:
            ta = arr_t[i]
        elif final and bs >= 0:
            ta = INF
        else:
            break
        t = bt if bt <= ta else ta
        if pi[Q_PIDLE]:
            busy = 0
            tg = 0
            for s in range(n):
                if srv[s] >= 0:
                    busy += 1
                    if _is_tagged(srv[s], J, pf, pi):
                        tg += 1
            _pidle(sc_f, t - now, tg, busy, n)
        now = t
        sc_i[I_EVENTS] += 1
        if bt <= ta:
            sl = srv[bs]
            srv[bs] = -1
            _complete(sl, now, J, S, pf, pi, sc_f, sc_i)
            nx = _q_pop(Q, sc_i)
            if nx >= 0:
                srv[bs] = nx
                j_comp[nx] = now + J[3][nx]
                J[10][nx] = now
                J[9][nx] = S_FCFS
        else:
            sl = _alloc(J, sc_i, id0 + i, ta, sizes[i])
            if sl < 0:
                sc_i[I_EVENTS] -= 1
                sc_f[F_NOW] = now
                return STATUS_FULL, i
            i += 1
            placed = False
            for s in range(n):
                if srv[s] < 0:
                    srv[s] = sl
                    j_comp[sl] = now + sizes[i - 1]
                    J[10][sl] = now
                    J[9][sl] = S_FCFS
                    placed = True
                    break
            if not placed:
                J[9][sl] = S_QUEUE
                _q_push_back(Q, sc_i, sl)
    sc_f[F_NOW] = now
    return STATUS_DONE, i


@njit(cache=True)
def _srpt(arr_t, sizes, id0, final, J, HA, HB, Q, srv, S, pf, pi, sc_f, sc_i):
    n = pi[Q_N]
    now = sc_f[F_NOW]
    m = arr_t.shape[0]
    i = 0
    while True:
        bt, bid, bk = _pool_next(J, srv, sc_i)
        if i < m:
            ta = arr_t[i]
        elif final and bk >= 0:
            ta = INF
        else:
            break
        t = bt if bt <= ta else ta
        if pi[Q_PIDLE]:
            _pidle(sc_f, t - now, _pool_tagged(J, srv, sc_i, pf, pi), sc_i[I_POOL], n)
        now = t
        sc_i[I_EVENTS] += 1
        if bt <= ta:
            sl = srv[bk]
            _pool_unserve(bk, now, J, srv, sc_i)
            _complete(sl, now, J, S, pf, pi, sc_f, sc_i)
            _pool_fill(now, n, J, srv, HA, sc_i)
        else:
            sl = _alloc(J, sc_i, id0 + i, ta, sizes[i])
            if sl < 0:
                sc_i[I_EVENTS] -= 1
                sc_f[F_NOW] = now
                return STATUS_FULL, i
            i += 1
            _pool_add(sl, now, n, J, srv, HA, sc_i)
    sc_f[F_NOW] = now
    return STATUS_DONE, i


@njit(cache=True)
def _sek_rebuild(now, J, srv, HA, pf, pi, sc_i):
    """Recompute the SEK allocation from scratch (few live jobs).

    Jobs that stay on a server are left untouched: a round trip through
    remaining = completion - now adds rounding that could flip exact ties.
    """
    n = pi[Q_N]
    eps = pf[P_EPS]
    orig = pi[Q_SEKORIG] != 0
    j_id, j_size, j_rem, j_flag = J[0], J[2], J[3], J[8]
    live = sc_i[I_LIVE]
    slots = np.empty(live, np.int64)
    rem = np.empty(live)
    served = np.zeros(live, np.bool_)
    c = 0
    for k in range(sc_i[I_POOL]):
        s = srv[k]
        slots[c] = s
        rem[c] = _rem_now(s, now, J)
        served[c] = True
        c += 1
    while True:
        s = _htop(HA, sc_i, I_HA, j_id, J[6])
        if s < 0:
            break
        _hpop(HA, sc_i, I_HA)
        J[6][s] += 1
        slots[c] = s
        rem[c] = j_rem[s]
        c += 1
    # insertion sort of positions by (remaining, id)
    order = np.arange(c)
    for a in range(1, c):
        x = order[a]
        b = a - 1
        while b >= 0 and _less(rem[x], j_id[slots[x]], rem[order[b]], j_id[slots[order[b]]]):
            order[b + 1] = order[b]
            b -= 1
        order[b + 1] = x
    skip = -1
    big = -1
    if c == n + 1:
        if orig:
            # order by original size for the predicate
            lg = slots[0]
            for a in range(c):
                s = slots[a]
                if _less(j_size[lg], j_id[lg], j_size[s], j_id[s]):
                    lg = s
            sec = -1
            ok = j_size[lg] > eps
            for a in range(c):
                s = slots[a]
                if s == lg:
                    continue
                if not j_size[s] < eps:
                    ok = False
                if sec < 0 or _less(j_size[sec], j_id[sec], j_size[s], j_id[s]):
                    sec = s
            if ok:
                skip = sec
                big = lg
        else:
            x = order[c - 1]
            ok = rem[x] > eps and j_flag[slots[x]] == 0
            for a in range(c - 1):
                if not rem[order[a]] < eps:
                    ok = False
            if ok:
                skip = slots[order[c - 2]]
                big = slots[x]
    want = np.zeros(c, np.bool_)
    if skip >= 0:
        for a in range(c):
            want[a] = slots[a] != skip
    else:
        for a in range(min(n, c)):
            want[order[a]] = True
    # take jobs off servers first, then fill the freed servers
    for a in range(c):
        if served[a] and not want[a]:
            s = slots[a]
            for k in range(sc_i[I_POOL]):
                if srv[k] == s:
                    _pool_unserve(k, now, J, srv, sc_i)
                    break
            _pool_wait(s, J, HA, sc_i)
    for a in range(c):
        if not served[a]:
            if want[a]:
                _pool_serve(slots[a], now, J, srv, sc_i)
            else:
                _pool_wait(slots[a], J, HA, sc_i)
    if skip >= 0:
        if sc_i[I_SEKACT] == 0:
            sc_i[I_CNT_A] += 1
        sc_i[I_SEKACT] = 1
        sc_i[I_SEKBIG] = big
        sc_i[I_SEKSKIP] = skip
    else:
        sc_i[I_SEKACT] = 0
        sc_i[I_SEKBIG] = -1
        sc_i[I_SEKSKIP] = -1


@njit(cache=True)
def _sek(arr_t, sizes, id0, final, J, HA, HB, Q, srv, S, pf, pi, sc_f, sc_i):
    n = pi[Q_N]
    eps = pf[P_EPS]
    orig = pi[Q_SEKORIG] != 0
    now = sc_f[F_NOW]
    m = arr_t.shape[0]
    i = 0
    while True:
        bt, bid, bk = _pool_next(J, srv, sc_i)
        ct = INF
        if sc_i[I_SEKACT] == 1:
            if not orig:
                ct = J[4][sc_i[I_SEKBIG]] - eps
            # a skipped job with nothing left completes where it stands
            sk = sc_i[I_SEKSKIP]
            if J[3][sk] <= EPS and (now < bt or (now == bt and J[0][sk] < bid)):
                bt, bid, bk = now, J[0][sk], -2
        if i < m:
            ta = arr_t[i]
        elif final and bk != -1:
            ta = INF
        else:
            break
        # completions, then checkpoints, then arrivals
        if bt <= ct and bt <= ta:
            t, kind = bt, 0
        elif ct <= ta:
            t, kind = ct, 1
        else:
            t, kind = ta, 2
        if pi[Q_PIDLE]:
            _pidle(sc_f, t - now, _pool_tagged(J, srv, sc_i, pf, pi), sc_i[I_POOL], n)
        now = t
        sc_i[I_EVENTS] += 1
        if kind == 0:
            if bk == -2:
                sl = sc_i[I_SEKSKIP]
                sc_i[I_SEKSKIP] = -1
            else:
                sl = srv[bk]
                _pool_unserve(bk, now, J, srv, sc_i)
            _complete(sl, now, J, S, pf, pi, sc_f, sc_i)
            _pool_fill(now, n, J, srv, HA, sc_i)
        elif kind == 1:
            J[8][sc_i[I_SEKBIG]] = 1
        else:
            sl = _alloc(J, sc_i, id0 + i, ta, sizes[i])
            if sl < 0:
                sc_i[I_EVENTS] -= 1
                sc_f[F_NOW] = now
                return STATUS_FULL, i
            i += 1
            if sc_i[I_SEKACT] == 1:
                # leave the exception first so the pool holds a plain SRPT state
                _sek_rebuild(now, J, srv, HA, pf, pi, sc_i)
            _pool_add(sl, now, n, J, srv, HA, sc_i)
        if sc_i[I_LIVE] == n + 1 or sc_i[I_SEKACT] == 1:
            _sek_rebuild(now, J, srv, HA, pf, pi, sc_i)
    sc_f[F_NOW] = now
    return STATUS_DONE, i


@njit(cache=True)
def _split_fetch(now, J, srv, HA, HB, sc_i):
    n_pool = sc_i[I_POOL]
    s = _htop(HB, sc_i, I_HB, J[0], J[7])
    if s < 0:
        return
    _hpop(HB, sc_i, I_HB)
    J[7][s] += 1
    if J[9][s] == S_POOL:
        for k in range(n_pool):
            if srv[k] == s:
                _pool_unserve(k, now, J, srv, sc_i)
                break
    else:
        J[6][s] += 1  # drops its heap A entry
    sc_i[I_LJF] = s
    J[9][s] = S_LJF
    J[4][s] = now + J[3][s]
    J[10][s] = now
    if np.isnan(J[5][s]):
        J[5][s] = now
    sc_i[I_CNT_A] += 1


@njit(cache=True)
def _split(arr_t, sizes, id0, final, J, HA, HB, Q, srv, S, pf, pi, sc_f, sc_i):
    n = pi[Q_N]
    now = sc_f[F_NOW]
    m = arr_t.shape[0]
    i = 0
    j_id, j_comp = J[0], J[4]
    while True:
        bt, bid, bk = _pool_next(J, srv, sc_i)
        lj = sc_i[I_LJF]
        if lj >= 0 and (j_comp[lj] < bt or (j_comp[lj] == bt and j_id[lj] < bid)):
            bt, bid, bk = j_comp[lj], j_id[lj], -2
        if i < m:
            ta = arr_t[i]
        elif final and bk != -1:
            ta = INF
        else:
            break
        t = bt if bt <= ta else ta
        if pi[Q_PIDLE]:
            tg = _pool_tagged(J, srv, sc_i, pf, pi)
            busy = sc_i[I_POOL]
            if lj >= 0:
                busy += 1
                if _is_tagged(lj, J, pf, pi):
                    tg += 1
            _pidle(sc_f, t - now, tg, busy, n)
        now = t
        sc_i[I_EVENTS] += 1
        if bt <= ta:
            if bk == -2:
                sc_i[I_LJF] = -1
                _complete(lj, now, J, S, pf, pi, sc_f, sc_i)
                _split_fetch(now, J, srv, HA, HB, sc_i)
            else:
                sl = srv[bk]
                _pool_unserve(bk, now, J, srv, sc_i)
                _complete(sl, now, J, S, pf, pi, sc_f, sc_i)
            _pool_fill(now, n - 1, J, srv, HA, sc_i)
        else:
            sl = _alloc(J, sc_i, id0 + i, ta, sizes[i])
            if sl < 0:
                sc_i[I_EVENTS] -= 1
                sc_f[F_NOW] = now
                return STATUS_FULL, i
            i += 1
            if sc_i[I_LJF] < 0:
                sc_i[I_LJF] = sl
                J[9][sl] = S_LJF
                j_comp[sl] = now + sizes[i - 1]
                J[10][sl] = now
                J[5][sl] = now
                sc_i[I_CNT_A] += 1
            else:
                J[7][sl] += 1
                _hpush(HB, sc_i, I_HB, -J[2][sl], j_id[sl], sl, J[7][sl])
                _pool_add(sl, now, n - 1, J, srv, HA, sc_i)
                if sc_i[I_HB] > 2 * sc_i[I_LIVE] + 64:
                    _hcompact(HB, sc_i, I_HB, j_id, J[7])
    sc_f[F_NOW] = now
    return STATUS_DONE, i


@njit(cache=True)
def _thresh_small_fill(now, J, srv, Q, sc_i, n):
    for s in range(n - 1):
        if srv[s] < 0:
            nx = _q_pop(Q, sc_i)
            if nx < 0:
                return
            srv[s] = nx
            J[4][nx] = now + J[3][nx]
            J[10][nx] = now
            J[9][nx] = S_FCFS


@njit(cache=True)
def _thresh_steal(now, J, Q, sc_i):
    nx = _q_pop(Q, sc_i)
    if nx >= 0:
        sc_i[I_STOLEN] = nx
        J[4][nx] = now + J[3][nx]
        J[10][nx] = now
        J[9][nx] = S_STOLEN
        sc_i[I_CNT_A] += 1


@njit(cache=True)
def _thresh(arr_t, sizes, id0, final, J, HA, HB, Q, srv, S, pf, pi, sc_f, sc_i):
    """SplitThresh; srv[0..n-2] are small servers (FCFS mode) or the SRPT
    pool array (SRPT mode), HB holds waiting big jobs."""
    n = pi[Q_N]
    d = pf[P_D]
    steal = pi[Q_STEAL] != 0
    small_srpt = pi[Q_SMALLSRPT] != 0
    now = sc_f[F_NOW]
    m = arr_t.shape[0]
    i = 0
    j_id, j_rem, j_comp = J[0], J[3], J[4]
    while True:
        big = sc_i[I_BIG]
        # candidate: (time, id, where) where 0..: small server / pool index, -2 big, -3 stolen
        bt = INF
        bid = -1
        bk = -1
        if small_srpt:
            bt, bid, bk = _pool_next(J, srv, sc_i)
        else:
            for s in range(n - 1):
                sl = srv[s]
                if sl >= 0 and (j_comp[sl] < bt or (j_comp[sl] == bt and j_id[sl] < bid)):
                    bt, bid, bk = j_comp[sl], j_id[sl], s
            st = sc_i[I_STOLEN]
            if st >= 0 and (j_comp[st] < bt or (j_comp[st] == bt and j_id[st] < bid)):
                bt, bid, bk = j_comp[st], j_id[st], -3
        if big >= 0 and (j_comp[big] < bt or (j_comp[big] == bt and j_id[big] < bid)):
            bt, bid, bk = j_comp[big], j_id[big], -2
        if i < m:
            ta = arr_t[i]
        elif final and bk != -1:
            ta = INF
        else:
            break
        t = bt if bt <= ta else ta
        if pi[Q_PIDLE]:
            busy = 0
            tg = 0
            if small_srpt:
                busy = sc_i[I_POOL]
                tg = _pool_tagged(J, srv, sc_i, pf, pi)
            else:
                for s in range(n - 1):
                    if srv[s] >= 0:
                        busy += 1
                        if _is_tagged(srv[s], J, pf, pi):
                            tg += 1
                if sc_i[I_STOLEN] >= 0:
                    busy += 1
                    if _is_tagged(sc_i[I_STOLEN], J, pf, pi):
                        tg += 1
            if big >= 0:
                busy += 1
                if _is_tagged(big, J, pf, pi):
                    tg += 1
            _pidle(sc_f, t - now, tg, busy, n)
        now = t
        sc_i[I_EVENTS] += 1
        if bt <= ta:
            if bk == -2:
                sc_i[I_BIG] = -1
                _complete(big, now, J, S, pf, pi, sc_f, sc_i)
                nb = _htop(HB, sc_i, I_HB, j_id, J[7])
                if nb >= 0:
                    _hpop(HB, sc_i, I_HB)
                    J[7][nb] += 1
                    sc_i[I_BIG] = nb
                    J[9][nb] = S_BIG
                    j_comp[nb] = now + j_rem[nb]
                    J[10][nb] = now
                    if np.isnan(J[5][nb]):
                        J[5][nb] = now
                elif steal:
                    if small_srpt:
                        _pool_fill(now, n, J, srv, HA, sc_i)
                    else:
                        _thresh_steal(now, J, Q, sc_i)
            elif bk == -3:
                st = sc_i[I_STOLEN]
                sc_i[I_STOLEN] = -1
                _complete(st, now, J, S, pf, pi, sc_f, sc_i)
                _thresh_steal(now, J, Q, sc_i)
            elif small_srpt:
                sl = srv[bk]
                _pool_unserve(bk, now, J, srv, sc_i)
                _complete(sl, now, J, S, pf, pi, sc_f, sc_i)
                cap = n if (steal and sc_i[I_BIG] < 0) else n - 1
                _pool_fill(now, cap, J, srv, HA, sc_i)
            else:
                sl = srv[bk]
                srv[bk] = -1
                _complete(sl, now, J, S, pf, pi, sc_f, sc_i)
                _thresh_small_fill(now, J, srv, Q, sc_i, n)
        else:
            sl = _alloc(J, sc_i, id0 + i, ta, sizes[i])
            if sl < 0:
                sc_i[I_EVENTS] -= 1
                sc_f[F_NOW] = now
                return STATUS_FULL, i
            i += 1
            size = sizes[i - 1]
            if size > d:
                if big < 0:
                    if steal:
                        if small_srpt:
                            sc_i[I_CNT_B] += _pool_shrink(now, n - 1, J, srv, HA, sc_i)
                        elif sc_i[I_STOLEN] >= 0:
                            st = sc_i[I_STOLEN]
                            sc_i[I_STOLEN] = -1
                            j_rem[st] = _rem_now(st, now, J)
                            j_comp[st] = INF
                            J[9][st] = S_QUEUE
                            _q_push_front(Q, sc_i, st)
                            sc_i[I_CNT_B] += 1
                            _thresh_small_fill(now, J, srv, Q, sc_i, n)
                    sc_i[I_BIG] = sl
                    J[9][sl] = S_BIG
                    j_comp[sl] = now + size
                    J[10][sl] = now
                    J[5][sl] = now
                else:
                    rb = _rem_now(big, now, J)
                    if _less(size, j_id[sl], rb, j_id[big]):
                        j_rem[big] = rb
                        j_comp[big] = INF
                        J[9][big] = S_BIGWAIT
                        J[7][big] += 1
                        _hpush(HB, sc_i, I_HB, rb, j_id[big], big, J[7][big])
                        sc_i[I_BIG] = sl
                        J[9][sl] = S_BIG
                        j_comp[sl] = now + size
                        J[10][sl] = now
                        J[5][sl] = now
                    else:
                        J[9][sl] = S_BIGWAIT
                        J[7][sl] += 1
                        _hpush(HB, sc_i, I_HB, size, j_id[sl], sl, J[7][sl])
            elif small_srpt:
                cap = n if (steal and big < 0) else n - 1
                _pool_add(sl, now, cap, J, srv, HA, sc_i)
            else:
                placed = False
                for s in range(n - 1):
                    if srv[s] < 0:
                        srv[s] = sl
                        j_comp[sl] = now + size
                        J[10][sl] = now
                        J[9][sl] = S_FCFS
                        placed = True
                        break
                if not placed:
                    if steal and big < 0 and sc_i[I_STOLEN] < 0:
                        sc_i[I_STOLEN] = sl
                        j_comp[sl] = now + size
                        J[10][sl] = now
                        J[9][sl] = S_STOLEN
                        sc_i[I_CNT_A] += 1
                    else:
                        J[9][sl] = S_QUEUE
                        _q_push_back(Q, sc_i, sl)
    sc_f[F_NOW] = now
    return STATUS_DONE, i


@njit(cache=True)
def _ps_advance(sc_f, sc_i, dt):
    k = sc_i[I_PSK]
    if k > 0:
        sc_f[F_V] += dt / k


@njit(cache=True)
def _ps_next(now, J, HB, sc_f, sc_i):
    s = _htop(HB, sc_i, I_HB, J[0], J[7])
    if s < 0:
        return INF, -1, -1
    return now + (HB[0][0] - sc_f[F_V]) * sc_i[I_PSK], J[0][s], s


@njit(cache=True)
def _ps_join(slot, J, HB, sc_f, sc_i, pf, pi):
    J[7][slot] += 1
    J[9][slot] = S_PS
    _hpush(HB, sc_i, I_HB, sc_f[F_V] + J[3][slot], J[0][slot], slot, J[7][slot])
    sc_i[I_PSK] += 1
    if _is_tagged(slot, J, pf, pi):
        sc_i[I_PSTAG] += 1


@njit(cache=True)
def _ps_leave(slot, J, HB, sc_f, sc_i, pf, pi):
    _hpop(HB, sc_i, I_HB)
    sc_i[I_PSK] -= 1
    if _is_tagged(slot, J, pf, pi):
        sc_i[I_PSTAG] -= 1
    if sc_i[I_PSK] == 0:
        sc_f[F_V] = 0.0
        sc_i[I_HB] = 0


@njit(cache=True)
def _tag(arr_t, sizes, id0, final, J, HA, HB, Q, srv, S, pf, pi, sc_f, sc_i):
    """TAG-SPLIT; srv[0..n-2] are FCFS servers, HB holds the PS set keyed by
    virtual finish tag.  j_flag marks a FCFS-stage job that will migrate."""
    n = pi[Q_N]
    d = pf[P_D]
    now = sc_f[F_NOW]
    m = arr_t.shape[0]
    i = 0
    j_id, j_size, j_rem, j_comp, j_flag = J[0], J[2], J[3], J[4], J[8]
    while True:
        # (time, kind, id): completions before migrations
        bt, bid, bs = _ps_next(now, J, HB, sc_f, sc_i)
        bkind = 0
        bsrv = -1
        for s in range(n - 1):
            sl = srv[s]
            if sl >= 0:
                c = j_comp[sl]
                kind = j_flag[sl]
                if c < bt or (c == bt and (kind < bkind or (kind == bkind and j_id[sl] < bid))):
                    bt, bid, bkind, bsrv = c, j_id[sl], kind, s
        if i < m:
            ta = arr_t[i]
        elif final and bid >= 0:
            ta = INF
        else:
            break
        t = bt if bt <= ta else ta
        if pi[Q_PIDLE]:
            busy = 0
            tg = 0
            for s in range(n - 1):
                if srv[s] >= 0:
                    busy += 1
                    if _is_tagged(srv[s], J, pf, pi):
                        tg += 1
            if sc_i[I_PSK] > 0:
                busy += 1
                tg += sc_i[I_PSTAG]
            _pidle(sc_f, t - now, tg, busy, n)
        _ps_advance(sc_f, sc_i, t - now)
        now = t
        sc_i[I_EVENTS] += 1
        if bt <= ta:
            if bsrv < 0:
                _ps_leave(bs, J, HB, sc_f, sc_i, pf, pi)
                _complete(bs, now, J, S, pf, pi, sc_f, sc_i)
            else:
                sl = srv[bsrv]
                srv[bsrv] = -1
                if bkind == 0:
                    _complete(sl, now, J, S, pf, pi, sc_f, sc_i)
                else:
                    j_rem[sl] = j_size[sl] - d
                    j_comp[sl] = INF
                    j_flag[sl] = 0
                    if j_size[sl] < sc_f[F_MINPS]:
                        sc_f[F_MINPS] = j_size[sl]
                    sc_i[I_CNT_A] += 1
                    if np.isnan(J[5][sl]):
                        J[5][sl] = now
                    _ps_join(sl, J, HB, sc_f, sc_i, pf, pi)
                nx = _q_pop(Q, sc_i)
                if nx >= 0:
                    srv[bsrv] = nx
                    J[9][nx] = S_FCFS
                    if j_size[nx] <= d:
                        j_comp[nx] = now + j_size[nx]
                    else:
                        j_comp[nx] = now + d
                        j_flag[nx] = 1
        else:
            sl = _alloc(J, sc_i, id0 + i, ta, sizes[i])
            if sl < 0:
                sc_i[I_EVENTS] -= 1
                sc_f[F_NOW] = now
                return STATUS_FULL, i
            i += 1
            placed = False
            for s in range(n - 1):
                if srv[s] < 0:
                    srv[s] = sl
                    J[9][sl] = S_FCFS
                    if j_size[sl] <= d:
                        j_comp[sl] = now + j_size[sl]
                    else:
                        j_comp[sl] = now + d
                        j_flag[sl] = 1
                    placed = True
                    break
            if not placed:
                J[9][sl] = S_QUEUE
                _q_push_back(Q, sc_i, sl)
    sc_f[F_NOW] = now
    return STATUS_DONE, i


@njit(cache=True)
def _ps(arr_t, sizes, id0, final, J, HA, HB, Q, srv, S, pf, pi, sc_f, sc_i):
    now = sc_f[F_NOW]
    m = arr_t.shape[0]
    i = 0
    while True:
        bt, bid, bs = _ps_next(now, J, HB, sc_f, sc_i)
        if i < m:
            ta = arr_t[i]
        elif final and bs >= 0:
            ta = INF
        else:
            break
        t = bt if bt <= ta else ta
        _ps_advance(sc_f, sc_i, t - now)
        now = t
        sc_i[I_EVENTS] += 1
        if bt <= ta:
            _ps_leave(bs, J, HB, sc_f, sc_i, pf, pi)
            _complete(bs, now, J, S, pf, pi, sc_f, sc_i)
        else:
            sl = _alloc(J, sc_i, id0 + i, ta, sizes[i])
            if sl < 0:
                sc_i[I_EVENTS] -= 1
                sc_f[F_NOW] = now
                return STATUS_FULL, i
            i += 1
            _ps_join(sl, J, HB, sc_f, sc_i, pf, pi)
    sc_f[F_NOW] = now
    return STATUS_DONE, i


_KERNELS = {
    "fcfs": _fcfs,
    "srpt": _srpt,
    "sek": _sek,
    "split": _split,
    "splitthresh": _thresh,
    "tagsplit": _tag,
    "ps": _ps,
}

_COUNTERS = {
    "fcfs": (),
    "srpt": (),
    "ps": (),
    "sek": ("sek_exceptions",),
    "split": ("ljf_fetches",),
    "splitthresh": ("steals", "steal_preemptions"),
    "tagsplit": ("migrations",),
}


# ---------------------------------------------------------------------------
# driver

class FastRun:
    """Holds a kernel's state across chunks of arrivals."""

    def __init__(self, spec: PolicySpec, n: int, grid, class_threshold=None, edges=None,
                 warmup: int = 0, tag_threshold: float = INF, ljf_floor: float = INF,
                 pidle: bool = False, capacity: int = 1 << 16, responses: int = 0):
        check_compatible(spec, n)
        self.spec = spec
        self.n = n
        self.kernel = _KERNELS[spec.kind]
        cap = capacity
        self.J = self._job_store(cap)
        self.HA = self._heap(2 * cap + 128)
        self.HB = self._heap(2 * cap + 128)
        self.Q = np.full(cap, -1, np.int64)
        self.srv = np.full(max(n, 1), -1, np.int64)
        grid = np.asarray(grid, dtype=np.float64)
        k = len(grid) + 1
        if edges is None:
            edges = np.full(9, INF)
        self.S = (grid, np.zeros(k, np.int64), np.zeros(k, np.int64), np.zeros((12, k), np.int64),
                  np.asarray(edges, dtype=np.float64), np.full(responses, np.nan))
        self.pf = np.array([INF if class_threshold is None else class_threshold,
                            tag_threshold, ljf_floor,
                            spec.d if spec.d is not None else INF,
                            spec.eps if spec.eps is not None else INF])
        self.pi = np.array([warmup, n, int(pidle), int(spec.steal), int(spec.small == "srpt"),
                            int(spec.sek_size == "original"), 0], dtype=np.int64)
        self.sc_f = np.zeros(8)
        self.sc_f[F_MINPS] = INF
        self.sc_i = np.zeros(24, np.int64)
        self.sc_i[I_FREE] = cap
        self.sc_i[I_LJF] = -1
        self.sc_i[I_STOLEN] = -1
        self.sc_i[I_BIG] = -1
        self.sc_i[I_SEKBIG] = -1
        self.sc_i[I_SEKSKIP] = -1
        self.next_id = 0

    @staticmethod
    def _job_store(cap):
        return (np.full(cap, -1, np.int64), np.zeros(cap), np.zeros(cap), np.zeros(cap),
                np.full(cap, INF), np.full(cap, np.nan), np.zeros(cap, np.int64),
                np.zeros(cap, np.int64), np.zeros(cap, np.int64), np.zeros(cap, np.int64),
                np.full(cap, np.nan), np.arange(cap - 1, -1, -1, dtype=np.int64))

    @staticmethod
    def _heap(cap):
        return (np.zeros(cap), np.zeros(cap, np.int64), np.zeros(cap, np.int64), np.zeros(cap, np.int64))

    def _grow(self):
        old = self.J[0].shape[0]
        new = old * 2
        J = self._job_store(new)
        for a, b in zip(J[:-1], self.J[:-1]):
            a[:old] = b
        # the store is full, so every old slot is live; hand out the new ones
        free = J[-1]
        free[: new - old] = np.arange(new - 1, old - 1, -1)
        self.sc_i[I_FREE] = new - old
        self.J = J

        def grow_heap(H, cap):
            out = self._heap(cap)
            for a, b in zip(out, H):
                a[: b.shape[0]] = b
            return out

        self.HA = grow_heap(self.HA, 2 * new + 128)
        self.HB = grow_heap(self.HB, 2 * new + 128)
        Q = np.full(new, -1, np.int64)
        h, c = self.sc_i[I_QHEAD], self.sc_i[I_QCNT]
        Q[:c] = self.Q[(h + np.arange(c)) % old]
        self.Q = Q
        self.sc_i[I_QHEAD] = 0

    def feed(self, times, sizes, final=False):
        times = np.ascontiguousarray(times, dtype=np.float64)
        sizes = np.ascontiguousarray(sizes, dtype=np.float64)
        start = 0
        while True:
            status, used = self.kernel(times[start:], sizes[start:], self.next_id, final,
                                       self.J, self.HA, self.HB, self.Q, self.srv, self.S,
                                       self.pf, self.pi, self.sc_f, self.sc_i)
            self.next_id += used
            start += used
            if status == STATUS_DONE:
                return
            self._grow()

    def drain(self):
        self.feed(np.empty(0), np.empty(0), final=True)

    # -- results -----------------------------------------------------------
    def estimate(self, class_threshold=None, edges=None):
        grid, ht, hs, hc, _, _ = self.S
        est = tailstats.TailEstimate(grid, class_threshold, edges)
        est.hist_t = ht.copy()
        est.hist_s = hs.copy()
        est.hist_class = hc.copy()
        est.sum_t = float(self.sc_f[F_SUMT])
        est.sum_t2 = float(self.sc_f[F_SUMT2])
        return est

    @property
    def responses(self):
        return self.S[5]

    @property
    def counters(self) -> dict:
        names = _COUNTERS[self.spec.kind]
        vals = [int(self.sc_i[I_CNT_A]), int(self.sc_i[I_CNT_B])]
        out = dict(zip(names, vals))
        if self.spec.kind == "tagsplit":
            out["min_migrated_size"] = float(self.sc_f[F_MINPS])
            out["max_fcfs_attained"] = float(self.spec.d) if self.sc_i[I_CNT_A] else 0.0
        out["max_live"] = int(self.sc_i[I_MAXLIVE])
        return out

    @property
    def events(self) -> int:
        return int(self.sc_i[I_EVENTS])

    def ljf_probe(self, floor):
        p = tailstats.LjfProbe(floor)
        p.qualifying = int(self.sc_i[I_LJFQ])
        p.prompt = int(self.sc_i[I_LJFP])
        return p

    def packing_probe(self, threshold, warmup):
        p = tailstats.PackingProbe(threshold, warmup)
        p.service_time = float(self.sc_f[F_PSVC])
        p.idle_time = float(self.sc_f[F_PIDLE])
        p.n_tagged = int(self.sc_i[I_TAGGED])
        return p


def run_trace_fast(trace, n: int, policy) -> np.ndarray:
    """Response times (arrival order) of a scripted trace on the compiled path."""
    spec = parse_policy(policy) if isinstance(policy, str) else policy
    m = len(trace)
    fr = FastRun(spec, n, grid=np.array([1.0]), responses=m, capacity=16)
    if m:
        times = np.array([a for a, _ in trace], dtype=np.float64)
        sizes = np.array([s for _, s in trace], dtype=np.float64)
        fr.feed(times, sizes)
    fr.drain()
    return fr.responses.copy()


def simulate_fast(config: ExperimentConfig, chunk: int = 1 << 20) -> SimResult:
    spec = parse_policy(config.policy)
    check_compatible(spec, config.n)
    params = config.params
    grid = tailstats.default_grid(config.dist, config.grid_points)
    edges = tailstats.decile_edges(config.dist)
    ljf_floor = tailstats.default_ljf_floor(config.dist) if config.probe == "ljf" else INF
    tag = tailstats.default_tag_threshold(config.dist) if config.probe == "pidle" else INF
    if config.probe == "pidle" and config.n < 2:
        raise ConfigError("packing probe needs at least two servers")
    fr = FastRun(spec, config.n, grid, class_threshold=spec.d, edges=edges, warmup=config.warmup,
                 tag_threshold=tag, ljf_floor=ljf_floor, pidle=config.probe == "pidle")
    t0 = time.perf_counter()
    for times, sizes in poisson_workload(params, config.arrivals, config.seed, chunk):
        fr.feed(times, sizes)
    fr.drain()
    est = fr.estimate(spec.d, edges)
    probes = {}
    if config.probe == "ljf":
        probes["ljf"] = fr.ljf_probe(ljf_floor)
    elif config.probe == "pidle":
        probes["pidle"] = fr.packing_probe(tag, config.warmup)
    return SimResult(
        arrivals=config.arrivals,
        completions=est.total,
        mean_response=est.mean_response,
        counters=fr.counters,
        estimate=est,
        probes=probes,
        events=fr.events,
        wall_time=time.perf_counter() - t0,
    )


def simulate(config: ExperimentConfig, backend: str = "fast") -> SimResult:
    """Run ``config`` on the compiled kernels (``fast``) or the reference
    Python engine (``python``).  Both consume the same arrival stream."""
    if backend == "fast":
        return simulate_fast(config)
    if backend == "python":
        from .engine import simulate_python

        return simulate_python(config)
    raise ConfigError(f"unknown backend {backend!r}")
