"""Compiled inner loops: scalar stage curves, drift map and the slot simulator.

Deferral values arrive here already made effective: a never-expiring
counter is passed as ``cw`` (it can never run out before the backoff
counter does), so every ``d`` is a plain non-negative integer.
"""

import math

import numpy as np
from numba import njit

_FTOL = 1e-16
_XTOL = 1e-15


@njit(cache=True)
def stage_tau_beta(cw, d, p):
    """Attempt and deferral-jump probabilities per slot at busy probability ``p``."""
    if d > cw - 1:
        d = cw - 1
    q = 1.0 - p
    inc = p ** (d + 1)
    x = 0.0
    sum_x = 0.0
    sum_wx = 0.0
    for k in range(d + 1, cw):
        x += inc
        if x > 1.0:
            x = 1.0
        sum_x += x
        sum_wx += x * (cw - k)
        inc *= k / (k - d) * q
    t = 1.0 - sum_x / cw
    bc = 0.5 * (cw + 1) - sum_wx / cw
    return t / bc, (1.0 - t) / bc


@njit(cache=True)
def _busy_from_tau(pe, tau):
    p = 1.0 - pe / (1.0 - tau)
    if p < 0.0:
        return 0.0
    if p > 1.0:
        return 1.0
    return p


@njit(cache=True)
def _h_tau(cw, d, pe, tau):
    return stage_tau_beta(cw, d, _busy_from_tau(pe, tau))[0] - tau


@njit(cache=True)
def tau_given_pe(cw, d, pe):
    """Self-consistent attempt probability of one stage at idle probability ``pe``.

    Illinois false position on the bracket [tau(p=1), tau(p=0)].
    """
    a = stage_tau_beta(cw, d, 1.0)[0]
    b = stage_tau_beta(cw, d, 0.0)[0]
    if b - a <= 0.0:
        return b
    fa = _h_tau(cw, d, pe, a)
    fb = _h_tau(cw, d, pe, b)
    if fa <= 0.0:
        return a
    if fb >= 0.0:
        return b
    side = 0
    c = b
    for _ in range(200):
        c = (a * fb - b * fa) / (fb - fa)
        fc = _h_tau(cw, d, pe, c)
        if fc == 0.0 or abs(fc) < _FTOL or b - a < _XTOL:
            return c
        if fc < 0.0:
            b = c
            fb = fc
            if side == -1:
                fa *= 0.5
            side = -1
        else:
            a = c
            fa = fc
            if side == 1:
                fb *= 0.5
            side = 1
    return c


@njit(cache=True)
def _log_idle(n, stage_type, tau_t):
    s = 0.0
    for i in range(n.size):
        if n[i] > 0.0:
            s += n[i] * math.log1p(-tau_t[stage_type[i]])
    return s


@njit(cache=True)
def _psi(pe, n, cw_t, d_t, stage_type, tau_t):
    for j in range(cw_t.size):
        tau_t[j] = tau_given_pe(cw_t[j], d_t[j], pe)
    return math.exp(_log_idle(n, stage_type, tau_t)) - pe


@njit(cache=True)
def pe_given_n(n, cw_t, d_t, stage_type):
    """Idle probability consistent with occupancy ``n``; returns (pe, tau per type)."""
    tau_t = np.empty(cw_t.size)
    total = 0.0
    for i in range(n.size):
        total += n[i]
    a = 0.0
    b = 1.0
    fa = _psi(a, n, cw_t, d_t, stage_type, tau_t)
    fb = _psi(b, n, cw_t, d_t, stage_type, tau_t)
    c = b
    if total <= 0.0 or fb >= 0.0:
        c = b
    elif fa <= 0.0:
        c = a
    else:
        side = 0
        for _ in range(200):
            c = (a * fb - b * fa) / (fb - fa)
            fc = _psi(c, n, cw_t, d_t, stage_type, tau_t)
            if fc == 0.0 or abs(fc) < _FTOL or b - a < _XTOL:
                break
            if fc < 0.0:
                b = c
                fb = fc
                if side == -1:
                    fa *= 0.5
                side = -1
            else:
                a = c
                fa = fc
                if side == 1:
                    fb *= 0.5
                side = 1
    _psi(c, n, cw_t, d_t, stage_type, tau_t)
    return c, tau_t


@njit(cache=True)
def drift_at(n, cw_t, d_t, stage_type):
    """Expected one-slot change of the occupancy vector, plus the per-stage rates."""
    m = n.size
    pe, tau_t = pe_given_n(n, cw_t, d_t, stage_type)
    tau = np.empty(m)
    p = np.empty(m)
    beta = np.empty(m)
    for i in range(m):
        j = stage_type[i]
        tau[i] = tau_t[j]
        p[i] = _busy_from_tau(pe, tau[i])
        beta[i] = stage_tau_beta(cw_t[j], d_t[j], p[i])[1]
    f = np.zeros(m)
    if m == 1:
        return f, pe, tau, p, beta
    for k in range(1, m):
        f[0] += n[k] * tau[k] * (1.0 - p[k])
    f[0] -= n[0] * (tau[0] * p[0] + beta[0])
    for i in range(1, m - 1):
        f[i] = n[i - 1] * (tau[i - 1] * p[i - 1] + beta[i - 1]) - n[i] * (tau[i] + beta[i])
    f[m - 1] = n[m - 2] * (tau[m - 2] * p[m - 2] + beta[m - 2]) - n[m - 1] * tau[m - 1] * (
        1.0 - p[m - 1]
    )
    return f, pe, tau, p, beta


@njit(cache=True)
def run_transient(n0, cw_t, d_t, stage_type, max_steps, eps, stride, tail_len):
    """Iterate ``n <- n + F(n)`` until ``max|F| < eps`` or ``max_steps``.

    Records every ``stride``-th state and always the last one.
    """
    m = n0.size
    cap = max_steps // stride + 2
    steps_rec = np.empty(cap, dtype=np.int64)
    n_rec = np.empty((cap, m))
    pe_rec = np.empty(cap)
    res_rec = np.empty(cap)
    tail = np.empty(tail_len)
    n = n0.copy()
    rec = 0
    step = 0
    converged = False
    while True:
        f, pe, _, _, _ = drift_at(n, cw_t, d_t, stage_type)
        r = 0.0
        for i in range(m):
            if abs(f[i]) > r:
                r = abs(f[i])
        tail[step % tail_len] = pe
        converged = r < eps
        last = converged or step >= max_steps
        if step % stride == 0 or last:
            steps_rec[rec] = step
            n_rec[rec] = n
            pe_rec[rec] = pe
            res_rec[rec] = r
            rec += 1
        if last:
            break
        for i in range(m):
            n[i] += f[i]
        step += 1
    k = min(step + 1, tail_len)
    ordered = np.empty(k)
    for j in range(k):
        ordered[j] = tail[(step - k + 1 + j) % tail_len]
    return steps_rec[:rec], n_rec[:rec], pe_rec[:rec], res_rec[:rec], converged, step, ordered


@njit(cache=True)
def mean_field_rho(y, cw_t, d_t, stage_type):
    """Bisection for ``rho = 1 - exp(-sum_k y_k tau_k(rho))``."""
    lo = 0.0
    hi = 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        s = 0.0
        for i in range(y.size):
            if y[i] != 0.0:
                j = stage_type[i]
                s += y[i] * stage_tau_beta(cw_t[j], d_t[j], mid)[0]
        if mid - (1.0 - math.exp(-s)) > 0.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


@njit(cache=True)
def ode_rhs(y, cw_t, d_t, stage_type):
    m = y.size
    rho = mean_field_rho(y, cw_t, d_t, stage_type)
    tau = np.empty(m)
    beta = np.empty(m)
    for i in range(m):
        j = stage_type[i]
        tau[i], beta[i] = stage_tau_beta(cw_t[j], d_t[j], rho)
    dy = np.zeros(m)
    if m == 1:
        return dy, rho
    for k in range(1, m):
        dy[0] += y[k] * tau[k] * (1.0 - rho)
    dy[0] -= y[0] * (tau[0] * rho + beta[0])
    for i in range(1, m - 1):
        dy[i] = y[i - 1] * (tau[i - 1] * rho + beta[i - 1]) - y[i] * (tau[i] + beta[i])
    dy[m - 1] = y[m - 2] * (tau[m - 2] * rho + beta[m - 2]) - y[m - 1] * tau[m - 1] * (1.0 - rho)
    return dy, rho


# ---------------------------------------------------------------- simulator

IDLE = 0
SUCCESS = 1
COLLISION = 2


@njit(cache=True)
def _enter(s, st, stage, bc, dc, cw, d, rng):
    stage[s] = st
    bc[s] = rng.integers(0, cw[st])
    dc[s] = d[st]


@njit(cache=True)
def slot_step(stage, bc, dc, cw, d, rng, is_tx, tx, stats):
    """Advance every station by one contention slot.

    ``stats`` accumulates per-station attempts, successes, collisions in
    columns 0..2 and deferral jumps in column 3.  Returns the slot outcome
    and the winning station (or -1).
    """
    n_st = stage.size
    m = cw.size
    ntx = 0
    for s in range(n_st):
        if bc[s] == 0:
            is_tx[s] = True
            tx[ntx] = s
            ntx += 1
        else:
            is_tx[s] = False
    if ntx == 0:
        for s in range(n_st):
            bc[s] -= 1
        return IDLE, -1
    winner = -1
    if ntx == 1:
        winner = tx[0]
        stats[winner, 0] += 1
        stats[winner, 1] += 1
        _enter(winner, 0, stage, bc, dc, cw, d, rng)
    else:
        for j in range(ntx):
            s = tx[j]
            stats[s, 0] += 1
            stats[s, 2] += 1
            _enter(s, min(stage[s] + 1, m - 1), stage, bc, dc, cw, d, rng)
    for s in range(n_st):
        if is_tx[s]:
            continue
        if dc[s] == 0:
            stats[s, 3] += 1
            _enter(s, min(stage[s] + 1, m - 1), stage, bc, dc, cw, d, rng)
        else:
            dc[s] -= 1
            bc[s] -= 1
    return (SUCCESS if ntx == 1 else COLLISION), winner


@njit(cache=True)
def _init_stations(n_st, cw, d, rng):
    stage = np.zeros(n_st, dtype=np.int64)
    bc = np.empty(n_st, dtype=np.int64)
    dc = np.empty(n_st, dtype=np.int64)
    for s in range(n_st):
        _enter(s, 0, stage, bc, dc, cw, d, rng)
    return stage, bc, dc


@njit(cache=True)
def simulate(cw, d, n_st, total_slots, rng, pe_window):
    m = cw.size
    stage, bc, dc = _init_stations(n_st, cw, d, rng)
    is_tx = np.zeros(n_st, dtype=np.bool_)
    tx = np.empty(n_st, dtype=np.int64)
    stats = np.zeros((n_st, 4), dtype=np.int64)
    counts = np.zeros(3, dtype=np.int64)
    success_ids = np.empty(total_slots, dtype=np.int64)
    n_succ = 0
    n_win = total_slots // pe_window
    pe_trace = np.zeros(n_win)
    occupancy = np.zeros(m)
    idle_in_window = 0
    for t in range(total_slots):
        for s in range(n_st):
            occupancy[stage[s]] += 1.0
        outcome, winner = slot_step(stage, bc, dc, cw, d, rng, is_tx, tx, stats)
        counts[outcome] += 1
        if outcome == IDLE:
            idle_in_window += 1
        elif outcome == SUCCESS:
            success_ids[n_succ] = winner
            n_succ += 1
        if (t + 1) % pe_window == 0:
            w = (t + 1) // pe_window - 1
            if w < n_win:
                pe_trace[w] = idle_in_window / pe_window
            idle_in_window = 0
    return counts, stats, success_ids[:n_succ], pe_trace, occupancy / total_slots


@njit(cache=True)
def stage_count_paths(cw, d, n_st, slots, replications, rng):
    """Mean number of stations per stage after each slot, over fresh replications."""
    m = cw.size
    acc = np.zeros((slots + 1, m))
    is_tx = np.zeros(n_st, dtype=np.bool_)
    tx = np.empty(n_st, dtype=np.int64)
    stats = np.zeros((n_st, 4), dtype=np.int64)
    for _ in range(replications):
        stage, bc, dc = _init_stations(n_st, cw, d, rng)
        for t in range(slots + 1):
            for s in range(n_st):
                acc[t, stage[s]] += 1.0
            if t < slots:
                slot_step(stage, bc, dc, cw, d, rng, is_tx, tx, stats)
    return acc / replications
