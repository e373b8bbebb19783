"""Compiled inner loops.

Every random draw comes from a ``numpy.random.Generator`` passed in by the
caller, through ``gen.random()`` and ``gen.standard_exponential()`` only, so a
run is a deterministic function of the generator state.

Draw order, per event of a continuous-time run:
  1. ``standard_exponential()`` for the holding time;
  2. ``random()`` to pick the event (its value also fixes the target link);
  3. the draws of the arrival procedure, if any (see ``arrive``).

Counter arrays hold ``[n_full, n_band, total_load, n_high]`` where a link is in
the band when its load is at least ``band_lo = K - sigma`` and is high when
its load is at least ``hi_level``.
"""

import numpy as np
from numba import njit

ACCEPTED_DIRECT = 0
REJECTED_COIN = 1
REROUTED = 2
LOST_REROUTE = 3
NO_OP_FULL = 4

MODE_DAR = 0
MODE_PRODUCT = 1
MODE_DISCRETE = 2

VAR_BASE = 0
VAR_RETRIES = 1
VAR_REFINED = 2
VAR_TRUNK = 3

# coupled-run stop reasons
STOP_CAP = -1
STOP_COALESCED = 0
STOP_Y_ONLY = 1
STOP_TEN_ATTEMPTS = 2
STOP_HIGH_LANDING = 3
STOP_CREATED_FULL = 4
STOP_MISMATCH_REROUTE = 5


# -- Fenwick tree over nonnegative integer weights ---------------------------

@njit(cache=True)
def fen_add(tree, i, delta):
    n = tree.shape[0] - 1
    i += 1
    while i <= n:
        tree[i] += delta
        i += i & (-i)


@njit(cache=True)
def fen_build(weights):
    n = weights.shape[0]
    tree = np.zeros(n + 1, dtype=np.int64)
    for i in range(n):
        fen_add(tree, i, weights[i])
    return tree


@njit(cache=True)
def fen_find(tree, u):
    """Index ``j`` with ``prefix(j) <= u < prefix(j+1)`` and the remainder ``u - prefix(j)``."""
    n = tree.shape[0] - 1
    step = 1
    while step * 2 <= n:
        step *= 2
    pos = 0
    rem = u
    while step > 0:
        nxt = pos + step
        if nxt <= n and tree[nxt] <= rem:
            pos = nxt
            rem -= tree[nxt]
        step //= 2
    return pos, rem


@njit(cache=True)
def _last_positive(weights):
    for j in range(weights.shape[0] - 1, -1, -1):
        if weights[j] > 0:
            return j
    return 0


@njit(cache=True)
def make_counts(loads, K, band_lo, hi_level):
    c = np.zeros(4, dtype=np.int64)
    for j in range(loads.shape[0]):
        v = loads[j]
        if v == K:
            c[0] += 1
        if v >= band_lo:
            c[1] += 1
        c[2] += v
        if v >= hi_level:
            c[3] += 1
    return c


@njit(cache=True)
def bump(loads, tree, counts, j, delta, K, band_lo, hi_level):
    old = loads[j]
    new = old + delta
    loads[j] = new
    counts[0] += (new == K) - (old == K)
    counts[1] += (new >= band_lo) - (old >= band_lo)
    counts[2] += delta
    counts[3] += (new >= hi_level) - (old >= hi_level)
    fen_add(tree, j, delta)


@njit(cache=True)
def uniform_link(gen, n):
    i = int(gen.random() * n)
    return n - 1 if i >= n else i


# -- single system -----------------------------------------------------------

@njit(cache=True)
def arrive(loads, tree, counts, K, band_lo, hi_level, rho, k, gen):
    """One call from the rate-2*lambda stream of link ``k``.

    Non-full target: one ``random()`` coin, accepted when below 1/2.
    Full target: up to ``rho`` tries of two ``random()`` draws each (``i`` then
    ``j``); the call lands on ``i`` at the first try with both loads below
    ``band_lo``. Returns ``(kind, target, tries)``.
    """
    n = loads.shape[0]
    if loads[k] < K:
        if gen.random() < 0.5:
            bump(loads, tree, counts, k, 1, K, band_lo, hi_level)
            return ACCEPTED_DIRECT, k, 0
        return REJECTED_COIN, k, 0
    for r in range(1, rho + 1):
        i = uniform_link(gen, n)
        j = uniform_link(gen, n)
        if loads[i] < band_lo and loads[j] < band_lo:
            bump(loads, tree, counts, i, 1, K, band_lo, hi_level)
            return REROUTED, i, r
    return LOST_REROUTE, -1, rho


@njit(cache=True)
def discrete_step(loads, tree, counts, K, band_lo, hi_level, alpha, gen):
    """One step of the discretised chain.

    Draws: ``B`` from ``random() < 1/(2 alpha + 1)``; if ``B = 1`` a link then a
    slot in ``1..K`` (emptied when the slot is occupied); otherwise ``B'`` from
    ``random() < (1 + 2 f (1 - f)) / 2`` and, when ``B' = 1``, a link that gains
    a call unless full. Returns ``+1``, ``-1`` or ``0`` (the load change).
    """
    n = loads.shape[0]
    if gen.random() < 1.0 / (2.0 * alpha + 1.0):
        j = uniform_link(gen, n)
        slot = int(gen.random() * K) + 1
        if slot > K:
            slot = K
        if slot <= loads[j]:
            bump(loads, tree, counts, j, -1, K, band_lo, hi_level)
            return -1
        return 0
    f = counts[0] / n
    if gen.random() < 0.5 * (1.0 + 2.0 * f * (1.0 - f)):
        j = uniform_link(gen, n)
        if loads[j] < K:
            bump(loads, tree, counts, j, 1, K, band_lo, hi_level)
            return 1
    return 0


@njit(cache=True)
def _stop_hit(counts, stop_which, stop_dir, stop_count):
    v = counts[0] if stop_which == 0 else counts[1]
    if stop_dir == 0:
        return v <= stop_count
    return v >= stop_count


@njit(cache=True)
def simulate(loads, K, sigma, rho, alpha, mode, up_lo, up_band, horizon, sample_dt,
             burn_in, event_cap, stop_which, stop_dir, stop_count, gen):
    """Continuous-time run of one system.

    ``mode``: DAR event semantics, product Erlang/ET links (per-link rates
    ``up_lo`` below the band and ``up_band`` on it, realised by thinning an
    ``up_lo`` stream), or the discretised chain clocked at ``(2 alpha + 1) K n``.
    ``stop_which`` >= 0 turns on a hitting-time stop on f (0) or g (1).
    ``loads`` is updated in place to the terminal state.
    """
    n = loads.shape[0]
    band_lo = K - sigma
    counts = make_counts(loads, K, band_lo, K + 1)
    tree = fen_build(loads)
    lam = alpha * K
    n_samples = int(np.floor(horizon / sample_dt + 1e-9)) + 1
    s_time = np.empty(n_samples)
    s_f = np.empty(n_samples)
    s_g = np.empty(n_samples)
    s_mean = np.empty(n_samples)
    s_lost = np.empty(n_samples, dtype=np.int64)
    s_acc = np.empty(n_samples, dtype=np.int64)
    stats = np.zeros(8)  # int_f, int_g, int_mean, min_f, max_f, min_g, max_g, span
    stats[3] = 2.0
    stats[5] = 2.0
    tallies = np.zeros(6, dtype=np.int64)  # events, arrivals, accepted, lost, departed, capped
    t = 0.0
    m = 0
    hit = False
    if stop_which >= 0 and _stop_hit(counts, stop_which, stop_dir, stop_count):
        hit = True
    if mode == MODE_DAR:
        arr_rate = 2.0 * lam * n
    elif mode == MODE_PRODUCT:
        arr_rate = up_lo * n
    else:
        arr_rate = (2.0 * alpha + 1.0) * K * n
    while True:
        if mode == MODE_DISCRETE:
            rate = arr_rate
        else:
            rate = arr_rate + counts[2]
        if hit:
            t_next = t
        elif rate > 0:
            t_next = t + gen.standard_exponential() / rate
        else:
            t_next = np.inf
        f = counts[0] / n
        g = counts[1] / n
        while m < n_samples and m * sample_dt <= t_next:
            s_time[m] = m * sample_dt
            s_f[m] = f
            s_g[m] = g
            s_mean[m] = counts[2] / n
            s_lost[m] = tallies[3]
            s_acc[m] = tallies[2]
            m += 1
        seg_lo = t if t > burn_in else burn_in
        seg_hi = t_next if t_next < horizon else horizon
        if seg_hi > seg_lo or (seg_hi == seg_lo and seg_lo >= burn_in and t_next >= horizon):
            span = seg_hi - seg_lo
            stats[0] += f * span
            stats[1] += g * span
            stats[2] += counts[2] / n * span
            stats[7] += span
            if f < stats[3]:
                stats[3] = f
            if f > stats[4]:
                stats[4] = f
            if g < stats[5]:
                stats[5] = g
            if g > stats[6]:
                stats[6] = g
        if hit or t_next > horizon:
            break
        t = t_next
        tallies[0] += 1
        if tallies[0] > event_cap:
            tallies[0] -= 1
            tallies[5] = 1
            break
        if mode == MODE_DISCRETE:
            d = discrete_step(loads, tree, counts, K, band_lo, K + 1, alpha, gen)
            if d > 0:
                tallies[2] += 1
            elif d < 0:
                tallies[4] += 1
        else:
            u = gen.random() * rate
            if u < arr_rate:
                tallies[1] += 1
                if mode == MODE_DAR:
                    k = int(u / (2.0 * lam))
                    if k >= n:
                        k = n - 1
                    kind, tgt, tries = arrive(loads, tree, counts, K, band_lo, K + 1, rho, k, gen)
                    if kind == ACCEPTED_DIRECT or kind == REROUTED:
                        tallies[2] += 1
                    elif kind == LOST_REROUTE:
                        tallies[3] += 1
                else:
                    k = int(u / up_lo)
                    if k >= n:
                        k = n - 1
                    take = True
                    if loads[k] >= band_lo and up_band < up_lo:
                        take = gen.random() < up_band / up_lo
                    if take:
                        if loads[k] < K:
                            bump(loads, tree, counts, k, 1, K, band_lo, K + 1)
                            tallies[2] += 1
                        else:
                            tallies[3] += 1
            else:
                j, rem = fen_find(tree, u - arr_rate)
                if j >= n or loads[j] == 0:
                    j = _last_positive(loads)
                bump(loads, tree, counts, j, -1, K, band_lo, K + 1)
                tallies[4] += 1
        if stop_which >= 0 and _stop_hit(counts, stop_which, stop_dir, stop_count):
            hit = True
    return (s_time[:m], s_f[:m], s_g[:m], s_mean[:m], s_lost[:m], s_acc[:m],
            stats, tallies, t, hit)


# -- coupled pair --------------------------------------------------------------

@njit(cache=True)
def cbump(x, y, tm, cx, cy, dist, j, dx, dy, K, band_lo, hi_level):
    """Apply load changes ``dx``/``dy`` on link ``j`` and keep all caches in step.

    ``dist`` holds ``[sum |x - y|, sum j * |x_j - y_j|]``; the second entry is
    the mismatched link whenever the distance is 1.
    """
    oldgap = abs(x[j] - y[j])
    oldmax = x[j] if x[j] > y[j] else y[j]
    if dx != 0:
        ox = x[j]
        nx = ox + dx
        x[j] = nx
        cx[0] += (nx == K) - (ox == K)
        cx[1] += (nx >= band_lo) - (ox >= band_lo)
        cx[2] += dx
        cx[3] += (nx >= hi_level) - (ox >= hi_level)
    if dy != 0:
        oy = y[j]
        ny = oy + dy
        y[j] = ny
        cy[0] += (ny == K) - (oy == K)
        cy[1] += (ny >= band_lo) - (oy >= band_lo)
        cy[2] += dy
        cy[3] += (ny >= hi_level) - (oy >= hi_level)
    newgap = abs(x[j] - y[j])
    newmax = x[j] if x[j] > y[j] else y[j]
    dist[0] += newgap - oldgap
    dist[1] += j * (newgap - oldgap)
    if newmax != oldmax:
        fen_add(tm, j, newmax - oldmax)


@njit(cache=True)
def _single_reroute(z, band_lo, rho, n, gen):
    for r in range(1, rho + 1):
        i = uniform_link(gen, n)
        j = uniform_link(gen, n)
        if z[i] < band_lo and z[j] < band_lo:
            return i, r
    return -1, rho


@njit(cache=True)
def coupled_arrival(x, y, tm, cx, cy, dist, K, band_lo, hi_level, rho, variant, k, gen, info):
    """Joint arrival on link ``k``.

    ``info`` receives ``[case, addX, addY, rerX, rerY, triesX, triesY, refined]``
    where case 0/1/2/3 is: full in neither / X only / Y only / both; ``add*`` is
    the link gaining a call (-1 for none); ``rer*`` flags a reroute attempt.
    Draw order: single-full cases draw the coin for the non-full system first,
    then the independent reroute of the full one; the both-full case draws the
    shared pairs, one try at a time.
    """
    n = x.shape[0]
    for q in range(8):
        info[q] = -1
    info[7] = 0
    fx = x[k] == K
    fy = y[k] == K
    info[3] = 1 if fx else 0
    info[4] = 1 if fy else 0
    if not fx and not fy:
        info[0] = 0
        if gen.random() < 0.5:
            cbump(x, y, tm, cx, cy, dist, k, 1, 1, K, band_lo, hi_level)
            info[1] = k
            info[2] = k
        return
    if fx and not fy:
        info[0] = 1
        if gen.random() < 0.5:
            cbump(x, y, tm, cx, cy, dist, k, 0, 1, K, band_lo, hi_level)
            info[2] = k
        i, r = _single_reroute(x, band_lo, rho, n, gen)
        info[5] = r
        if i >= 0:
            cbump(x, y, tm, cx, cy, dist, i, 1, 0, K, band_lo, hi_level)
            info[1] = i
        return
    if fy and not fx:
        info[0] = 2
        if gen.random() < 0.5:
            cbump(x, y, tm, cx, cy, dist, k, 1, 0, K, band_lo, hi_level)
            info[1] = k
        i, r = _single_reroute(y, band_lo, rho, n, gen)
        info[6] = r
        if i >= 0:
            cbump(x, y, tm, cx, cy, dist, i, 0, 1, K, band_lo, hi_level)
            info[2] = i
        return
    info[0] = 3
    if variant == VAR_REFINED and dist[0] == 1:
        m = dist[1]
        if x[m] == K or y[m] == K:
            info[7] = 1
            _refined_both_full(x, y, tm, cx, cy, dist, K, band_lo, hi_level, rho, m, gen, info)
            return
    done_x = False
    done_y = False
    for r in range(1, rho + 1):
        if done_x and done_y:
            break
        i = uniform_link(gen, n)
        j = uniform_link(gen, n)
        if not done_x:
            info[5] = r
            if x[i] < band_lo and x[j] < band_lo:
                done_x = True
                info[1] = i
        if not done_y:
            info[6] = r
            if y[i] < band_lo and y[j] < band_lo:
                done_y = True
                info[2] = i
    if info[1] >= 0 and info[1] == info[2]:
        cbump(x, y, tm, cx, cy, dist, info[1], 1, 1, K, band_lo, hi_level)
    else:
        if info[1] >= 0:
            cbump(x, y, tm, cx, cy, dist, info[1], 1, 0, K, band_lo, hi_level)
        if info[2] >= 0:
            cbump(x, y, tm, cx, cy, dist, info[2], 0, 1, K, band_lo, hi_level)


@njit(cache=True)
def _refined_both_full(x, y, tm, cx, cy, dist, K, band_lo, hi_level, rho, m, gen, info):
    """Both-full arrival under the refined retries coupling.

    The system with the extra full link ``m`` is "big"; pairs are drawn until
    one is admissible in the other ("small") system. When ``m`` is in that pair
    the big system accepts with probability ``1 - (1 - (1 - f_big)^2)^(rho - R)``
    (one ``random()``), then, if the landing link is ``m`` itself, re-draws a
    uniform non-full link by rejection.
    """
    n = x.shape[0]
    big_is_x = x[m] == K
    if big_is_x:
        big = x
        small = y
        f_big = cx[0] / n
    else:
        big = y
        small = x
        f_big = cy[0] / n
    found = False
    ri = -1
    rj = -1
    rr = 0
    for r in range(1, rho + 1):
        i = uniform_link(gen, n)
        j = uniform_link(gen, n)
        rr = r
        if small[i] < K and small[j] < K:
            found = True
            ri = i
            rj = j
            break
    if big_is_x:
        info[5] = rr
        info[6] = rr
    else:
        info[5] = rr
        info[6] = rr
    if not found:
        return
    add_big = -1
    if ri != m and rj != m:
        add_big = ri
    else:
        free = 1.0 - f_big
        p_fail = (1.0 - free * free) ** (rho - rr)
        if gen.random() < 1.0 - p_fail:
            if ri != m:
                add_big = ri
            else:
                while True:
                    c = uniform_link(gen, n)
                    if big[c] < K:
                        add_big = c
                        break
    if big_is_x:
        info[2] = ri
        info[1] = add_big
    else:
        info[1] = ri
        info[2] = add_big
    if add_big == ri:
        cbump(x, y, tm, cx, cy, dist, ri, 1, 1, K, band_lo, hi_level)
    else:
        if big_is_x:
            cbump(x, y, tm, cx, cy, dist, ri, 0, 1, K, band_lo, hi_level)
            if add_big >= 0:
                cbump(x, y, tm, cx, cy, dist, add_big, 1, 0, K, band_lo, hi_level)
        else:
            cbump(x, y, tm, cx, cy, dist, ri, 1, 0, K, band_lo, hi_level)
            if add_big >= 0:
                cbump(x, y, tm, cx, cy, dist, add_big, 0, 1, K, band_lo, hi_level)


@njit(cache=True)
def coupled_departure(x, y, tm, cx, cy, dist, K, band_lo, hi_level, u):
    """Departure chosen by ``u`` in ``[0, sum_j max(x_j, y_j))``.

    Slots below ``min(x_j, y_j)`` are shared clocks and leave both systems;
    the remaining slots belong to whichever system holds the extra calls.
    Returns ``(link, dx, dy)``.
    """
    n = x.shape[0]
    j, rem = fen_find(tm, u)
    if j >= n or (x[j] == 0 and y[j] == 0):
        w = np.maximum(x, y)
        j = _last_positive(w)
        rem = (x[j] if x[j] > y[j] else y[j]) - 0.5
    slot = int(rem)
    lo = x[j] if x[j] < y[j] else y[j]
    if slot < lo:
        dx, dy = -1, -1
    elif x[j] > y[j]:
        dx, dy = -1, 0
    else:
        dx, dy = 0, -1
    cbump(x, y, tm, cx, cy, dist, j, dx, dy, K, band_lo, hi_level)
    return j, dx, dy


@njit(cache=True)
def coupled_step(x, y, tm, cx, cy, dist, K, band_lo, hi_level, rho, variant, lam, gen, info):
    """One joint event; returns ``(is_arrival, link)``. ``info`` as in ``coupled_arrival``."""
    n = x.shape[0]
    arr_rate = 2.0 * lam * n
    rate = arr_rate + tm_total(tm)
    u = gen.random() * rate
    if u < arr_rate:
        k = int(u / (2.0 * lam))
        if k >= n:
            k = n - 1
        coupled_arrival(x, y, tm, cx, cy, dist, K, band_lo, hi_level, rho, variant, k, gen, info)
        return True, k
    j, dx, dy = coupled_departure(x, y, tm, cx, cy, dist, K, band_lo, hi_level, u - arr_rate)
    info[0] = -1
    info[1] = -1 if dx == 0 else -2
    info[2] = -1 if dy == 0 else -2
    return False, j


@njit(cache=True)
def tm_total(tm):
    n = tm.shape[0] - 1
    s = 0
    i = n
    while i > 0:
        s += tm[i]
        i -= i & (-i)
    return s


@njit(cache=True)
def coupled_run(x, y, K, sigma, rho, variant, alpha, time_cap, event_cap, mode,
                hi_level, good_lo, good_hi, good_which, xi_level, gen):
    """Coupled evolution of ``(x, y)`` in place.

    ``mode`` 0 stops at coalescence; 1 runs ``event_cap`` events and audits
    the per-event distance change; 2 applies the low-regime stopping rules,
    3 the high-regime ones; 4 runs to ``time_cap`` without stopping. For modes 2/3 the good band requires
    ``good_lo <= count <= good_hi`` in both systems, where the count is the
    number of high links (``good_which`` 3) or of full links (0).
    ``xi_level`` is the landing threshold of the low rules.

    Returns ``(t, events, reason, d_final, W, good, audit, f_int)`` where
    ``f_int`` holds the time integrals of the full fractions of x and y. ``audit`` holds
    the count of per-case bound violations, the largest |delta d| for
    departures and for arrival cases 0..3, the largest signed delta d per
    arrival case, refined fallbacks taken at distance 1, and the number of
    events that broke an existing coalescence.
    """
    n = x.shape[0]
    band_lo = K - sigma
    lam = alpha * K
    cx = make_counts(x, K, band_lo, hi_level)
    cy = make_counts(y, K, band_lo, hi_level)
    tm = fen_build(np.maximum(x, y))
    dist = np.zeros(2, dtype=np.int64)
    for j in range(n):
        g = abs(x[j] - y[j])
        dist[0] += g
        dist[1] += j * g
    info = np.zeros(8, dtype=np.int64)
    audit = np.zeros(12, dtype=np.int64)  # violations, max|dd| dep, case0..3, max dd case0..3, fallbacks, breaks
    t = 0.0
    events = 0
    reason = STOP_CAP
    W = dist[0]
    good = True
    if mode >= 2:
        good = _in_band(cx, cy, good_which, good_lo, good_hi)
    m = dist[1] if dist[0] == 1 else -1
    phase = 1
    attempts = 0
    f_int = np.zeros(2)
    if (mode == 0 or mode == 2 or mode == 3) and dist[0] == 0:
        return t, events, STOP_COALESCED, 0, W, good, audit, f_int
    while True:
        rate = 2.0 * lam * n + tm_total(tm)
        if mode != 1:
            dt = gen.standard_exponential() / rate
            if t + dt > time_cap:
                f_int[0] += cx[0] / n * (time_cap - t)
                f_int[1] += cy[0] / n * (time_cap - t)
                t = time_cap
                break
            f_int[0] += cx[0] / n * dt
            f_int[1] += cy[0] / n * dt
            t += dt
        events += 1
        if events > event_cap:
            events -= 1
            break
        d_before = dist[0]
        pre_m = m
        is_arr, k = coupled_step(x, y, tm, cx, cy, dist, K, band_lo, hi_level, rho, variant, lam, gen, info)
        delta = dist[0] - d_before
        if mode == 1:
            if d_before == 0 and dist[0] > 0:
                audit[11] += 1
            adelta = abs(delta)
            if not is_arr:
                if adelta > audit[1]:
                    audit[1] = adelta
                if adelta > 1:
                    audit[0] += 1
            else:
                c = info[0]
                if adelta > audit[2 + c]:
                    audit[2 + c] = adelta
                if delta > audit[6 + c]:
                    audit[6 + c] = delta
                if c == 0 and delta != 0:
                    audit[0] += 1
                elif (c == 1 or c == 2) and (delta > 1 or delta < -2):
                    audit[0] += 1
                elif c == 3:
                    bound = 2 if variant == VAR_RETRIES else 1
                    if adelta > bound:
                        audit[0] += 1
                if c == 3 and variant == VAR_REFINED and info[7] == 0 and d_before == 1:
                    audit[10] += 1
            if events >= event_cap:
                break
            continue
        if mode == 4:
            continue
        if mode == 0:
            if dist[0] == 0:
                reason = STOP_COALESCED
                break
            continue
        # stopping-rule modes
        if good and not _in_band(cx, cy, good_which, good_lo, good_hi):
            good = False
        stop = -2
        if dist[0] == 0:
            stop = STOP_COALESCED
        elif is_arr and info[2] >= 0 and info[1] < 0:
            stop = STOP_Y_ONLY
        if mode == 2 and stop == -2:
            if is_arr and phase == 1 and k == pre_m and info[3] == 1:
                attempts += 1
                if attempts >= 10:
                    stop = STOP_TEN_ATTEMPTS
            if is_arr and phase == 1 and stop == -2:
                c = info[0]
                if (c == 1 or c == 3) and info[1] >= 0:
                    if x[info[1]] - 1 >= xi_level:
                        stop = STOP_HIGH_LANDING
                if (c == 2 or c == 3) and info[2] >= 0:
                    if x[info[2]] - (1 if info[1] == info[2] else 0) >= xi_level:
                        stop = STOP_HIGH_LANDING
            if stop == -2:
                for l in (k, info[1], info[2]):
                    if l >= 0 and (phase == 2 or l != pre_m) and x[l] != y[l] and (x[l] == K or y[l] == K):
                        stop = STOP_CREATED_FULL
            if phase == 1 and x[pre_m] == y[pre_m]:
                phase = 2
        elif mode == 3 and stop == -2:
            if is_arr and k == pre_m and info[0] == 1:
                stop = STOP_MISMATCH_REROUTE
            if dist[0] == 1:
                m = dist[1]
        if stop != -2:
            reason = stop
            break
        if dist[0] > W:
            W = dist[0]
    return t, events, reason, dist[0], W, good, audit, f_int


@njit(cache=True)
def _in_band(cx, cy, which, lo, hi):
    a = cx[which]
    b = cy[which]
    return lo <= a <= hi and lo <= b <= hi


# -- domination sandwich -------------------------------------------------------

@njit(cache=True)
def domination(lo_sys, x, up_sys, has_lo, has_up, K, alpha, beta_lo, beta_up, band_kind,
               band_count, horizon, sample_dt, event_cap, gen):
    """Evolve (lower Erlang, DAR, upper Erlang) on shared streams.

    Each link carries a stream of rate ``B K`` with ``B`` bounding every
    intensity involved; one shared ``random()`` thins it for all three
    systems (system s accepts when the draw is below ``beta_s / B`` and its
    link is not full). Departures use nested shared slots per link.
    ``band_kind``: 0 none, 1 ``count in [c, n - c]``, 2 ``count <= c``,
    3 ``count >= c`` (count of full links in the DAR system).
    """
    n = x.shape[0]
    B = 1.5 * alpha
    if has_lo and beta_lo > B:
        B = beta_lo
    if has_up and beta_up > B:
        B = beta_up
    arr_rate = B * K * n
    w = x.copy()
    for j in range(n):
        if has_lo and lo_sys[j] > w[j]:
            w[j] = lo_sys[j]
        if has_up and up_sys[j] > w[j]:
            w[j] = up_sys[j]
    tree = fen_build(w)
    full_x = 0
    full_lo = 0
    full_up = 0
    for j in range(n):
        full_x += x[j] == K
        full_lo += lo_sys[j] == K
        full_up += up_sys[j] == K
    n_samples = int(np.floor(horizon / sample_dt + 1e-9)) + 1
    samples = np.empty((n_samples, 4))
    viol = np.full((64, 3), -1.0)
    n_viol = 0
    t = 0.0
    ms = 0
    events = 0
    exit_time = -1.0
    in_band = _band_ok(full_x, n, band_kind, band_count)
    if not in_band:
        exit_time = 0.0
    for j in range(n):
        if (has_lo and lo_sys[j] > x[j]) or (has_up and x[j] > up_sys[j]):
            if n_viol < 64:
                viol[n_viol, 0] = 0.0
                viol[n_viol, 1] = j
                viol[n_viol, 2] = 0
            n_viol += 1
    capped = False
    while True:
        total = tm_total(tree)
        rate = arr_rate + total
        t_next = t + gen.standard_exponential() / rate
        while ms < n_samples and ms * sample_dt <= t_next:
            samples[ms, 0] = ms * sample_dt
            samples[ms, 1] = full_lo / n
            samples[ms, 2] = full_x / n
            samples[ms, 3] = full_up / n
            ms += 1
        if t_next > horizon:
            break
        t = t_next
        events += 1
        if events > event_cap:
            events -= 1
            capped = True
            break
        u = gen.random() * rate
        if u < arr_rate:
            k = int(u / (B * K))
            if k >= n:
                k = n - 1
            v = gen.random()
            f = full_x / n
            beta_x = alpha * (1.0 + 2.0 * f * (1.0 - f))
            if v < beta_x / B and x[k] < K:
                x[k] += 1
                full_x += x[k] == K
            if has_lo and v < beta_lo / B and lo_sys[k] < K:
                lo_sys[k] += 1
                full_lo += lo_sys[k] == K
            if has_up and v < beta_up / B and up_sys[k] < K:
                up_sys[k] += 1
                full_up += up_sys[k] == K
            link = k
        else:
            j, rem = fen_find(tree, u - arr_rate)
            if j >= n or w[j] == 0:
                j = _last_positive(w)
                rem = w[j] - 0.5
            slot = int(rem)
            if x[j] > slot:
                full_x -= x[j] == K
                x[j] -= 1
            if has_lo and lo_sys[j] > slot:
                full_lo -= lo_sys[j] == K
                lo_sys[j] -= 1
            if has_up and up_sys[j] > slot:
                full_up -= up_sys[j] == K
                up_sys[j] -= 1
            link = j
        new_w = x[link]
        if has_lo and lo_sys[link] > new_w:
            new_w = lo_sys[link]
        if has_up and up_sys[link] > new_w:
            new_w = up_sys[link]
        if new_w != w[link]:
            fen_add(tree, link, new_w - w[link])
            w[link] = new_w
        if in_band:
            if (has_lo and lo_sys[link] > x[link]) or (has_up and x[link] > up_sys[link]):
                if n_viol < 64:
                    viol[n_viol, 0] = t
                    viol[n_viol, 1] = link
                    viol[n_viol, 2] = 1 if (has_lo and lo_sys[link] > x[link]) else 2
                n_viol += 1
            if not _band_ok(full_x, n, band_kind, band_count):
                in_band = False
                exit_time = t
    return samples[:ms], viol[: min(n_viol, 64)], n_viol, exit_time, events, capped


@njit(cache=True)
def _band_ok(count, n, kind, c):
    if kind == 0:
        return True
    if kind == 1:
        return c <= count <= n - c
    if kind == 2:
        return count <= c
    return count >= c
