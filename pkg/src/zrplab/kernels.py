"""Event-driven cores, compiled with numba.

All kernels realize the same thinned mark dynamics.  With M particles on the
domain (conserved both on the torus and under blocked interval edges),
candidate marks arrive at total rate gamma_plus * M; one Philox block per
candidate supplies

  u_dt    -> the gap to the next candidate, Exp(gamma_plus * M);
  u_pick  -> a uniform particle slot (integer part), whose site x has
             occupancy k, plus, nested in the fractional parts, a uniform
             height n in 1..k and a fair direction bit (integer and
             fractional parts of a uniform scaled by an integer are exactly
             independent, so the decomposition is unbiased);
  u_acc   -> acceptance test u_acc <= (g(n) - g(n-1)) / gamma_plus.

The candidate site is read off a uniform slot: each process keeps one slot
per particle, so a uniform slot lands on site x with probability k(x)/M, and
the restricted mark field (heights n <= occupancy) is reproduced exactly.

Couplings drive two independent mark fields from two counter streams of the
same replica; the field that a given process reads never consumes randomness
from the other stream, which is what makes the replay-independence property
(same field-1 stream, different field-2 stream, identical high-density event
log) hold bit-exactly.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .rng import draw_candidate, draw_uniform64, split_seed

DONE = 0
LOG_FULL = 3
PILE_OVERFLOW = 4
TABLE_OVERFLOW = 6

PILE_CAP = 64
U1 = np.uint64(1)


@njit(cache=True, inline="always")
def _wrap(x, n):
    if x >= n:
        return x - n
    if x < 0:
        return x + n
    return x


@njit(cache=True, inline="always")
def _coord(site, origin, n_sites):
    """Lattice coordinate in [-(N//2), N - N//2) of a torus site index."""
    c = site - origin
    half = n_sites // 2
    if c >= n_sites - half:
        c -= n_sites
    elif c < -half:
        c += n_sites
    return c


@njit(cache=True, inline="always")
def _thr(n, thr_table, thr_tail):
    if n <= thr_table.shape[0]:
        return thr_table[n - 1]
    return thr_tail


@njit(cache=True, inline="always")
def _g_of(k, g_table, g_tail):
    if k < g_table.shape[0]:
        return g_table[k]
    return g_table[g_table.shape[0] - 1] + (k - g_table.shape[0] + 1) * g_tail


@njit(cache=True, inline="always")
def _decompose_pick(u_pick, n_slots, slot_site, counts):
    """(slot, site, height, direction) from one uniform."""
    scaled = u_pick * n_slots
    p = np.int64(scaled)
    if p >= n_slots:
        p = n_slots - 1
    x = slot_site[p]
    k = counts[x]
    nh = (scaled - p) * k
    n = np.int64(nh) + 1
    if n > k:
        n = k
    h = -1 if (nh - (n - 1)) < 0.5 else 1
    return p, x, n, h


# ---------------------------------------------------------------------------
# Plain counts engine: evolve + snapshots + event log + site/box trackers.
# ---------------------------------------------------------------------------

@njit(cache=True)
def counts_kernel(
    counts, slot_site, torus,
    thr_table, thr_tail, total_rate, t_end,
    fstate,            # float64[2]: t_now, pending gap (<0: draw one)
    rstate,            # int64[1]: philox draw index
    seed, replica, stream,
    snap_times, snap_out, snap_idx,
    log_cap, log_t, log_x, log_n, log_u, log_h, log_acc, log_len,
    watch_site, watch_max,
    boxes,             # float64[B,4] rows (x0, x1, t0, t1), site-index space
    box_state, box_cur_sum, box_max, box_integral,
):
    n_sites = counts.shape[0]
    n_slots = slot_site.shape[0]
    k0, k1 = split_seed(seed)
    rep = np.uint64(replica)
    st = np.uint64(stream)
    idx = np.uint64(rstate[0])
    t = fstate[0]
    si = snap_idx[0]
    n_snap = snap_times.shape[0]
    n_boxes = boxes.shape[0]

    if n_slots == 0 or total_rate <= 0.0:
        while si < n_snap:
            snap_out[si, :] = counts
            si += 1
        snap_idx[0] = si
        fstate[0] = t_end
        return DONE

    while True:
        u_dt, u_pick, u_acc = draw_candidate(idx, rep, st, k0, k1)
        idx += U1
        if fstate[1] < 0.0:
            fstate[1] = -np.log1p(-u_dt) / total_rate
        t_next = t + fstate[1]
        bound = t_next if t_next < t_end else t_end

        while si < n_snap and snap_times[si] <= bound:
            snap_out[si, :] = counts
            si += 1

        for b in range(n_boxes):
            t0 = boxes[b, 2]
            t1 = boxes[b, 3]
            if box_state[b] == 0 and bound >= t0:
                s = 0
                mx = 0
                for x in range(np.int64(boxes[b, 0]), np.int64(boxes[b, 1]) + 1):
                    s += counts[x]
                    if counts[x] > mx:
                        mx = counts[x]
                box_cur_sum[b] = s
                if mx > box_max[b]:
                    box_max[b] = mx
                box_state[b] = 1
            if box_state[b] == 1:
                lo = t if t > t0 else t0
                hi = bound if bound < t1 else t1
                if hi > lo:
                    box_integral[b] += (hi - lo) * box_cur_sum[b]
                if bound >= t1:
                    box_state[b] = 2

        if t_next >= t_end:
            fstate[0] = t_end
            fstate[1] = t_next - t_end
            rstate[0] = np.int64(idx)
            snap_idx[0] = si
            return DONE

        t = t_next
        fstate[1] = -1.0

        p, x, n, h = _decompose_pick(u_pick, n_slots, slot_site, counts)
        thr_val = _thr(n, thr_table, thr_tail)
        if thr_val != thr_val:  # NaN: occupancy beyond a table-only rate
            rstate[0] = np.int64(idx)
            return TABLE_OVERFLOW
        accepted = u_acc <= thr_val
        y = x
        moved = False
        if accepted:
            y = x + h
            if torus:
                y = _wrap(y, n_sites)
                moved = True
            elif 0 <= y < n_sites:
                moved = True
            else:
                y = x  # blocked edge: configuration unchanged

        if log_cap > 0:
            li = log_len[0]
            if li >= log_cap:
                fstate[0] = t
                fstate[1] = 0.0
                rstate[0] = np.int64(idx)
                snap_idx[0] = si
                return LOG_FULL
            log_t[li] = t
            log_x[li] = x
            log_n[li] = n
            log_u[li] = u_acc
            log_h[li] = h
            log_acc[li] = 1 if (accepted and moved) else 0
            log_len[0] = li + 1

        if moved:
            counts[x] -= 1
            counts[y] += 1
            slot_site[p] = y
            if y == watch_site and counts[y] > watch_max[0]:
                watch_max[0] = counts[y]
            for b in range(n_boxes):
                if box_state[b] == 1:
                    in_x = boxes[b, 0] <= x <= boxes[b, 1]
                    in_y = boxes[b, 0] <= y <= boxes[b, 1]
                    if in_y and not in_x:
                        box_cur_sum[b] += 1
                    elif in_x and not in_y:
                        box_cur_sum[b] -= 1
                    if in_y and counts[y] > box_max[b]:
                        box_max[b] = counts[y]
        elif x == watch_site and counts[x] > watch_max[0]:
            watch_max[0] = counts[x]


# ---------------------------------------------------------------------------
# Infection overlay engine.
#
# Site status is all-or-nothing, so the overlay is a per-site infected flag
# plus the front tracked in unwrapped lattice coordinates.  The front moves
# only via accepted jumps at the front site, always by +-1: a right jump of
# an infected front particle advances it, and when the front pile empties by
# a left jump the (infected) mover at front-1 becomes the new front.  The
# compensator integral of the front martingale is accumulated exactly, the
# integrand being piecewise constant between events.
# ---------------------------------------------------------------------------

IS_FRONT = 0
IS_SUP = 1
IS_INF = 2
IS_ESCAPED = 3
IS_EXIT_SIDE = 4
IS_HOR_IDX = 5
IS_VIOLATIONS = 6
IS_IDX = 7
IS_LEN = 8

FS_T = 0
FS_NEXT_DT = 1
FS_INTEGRAL = 2
FS_EXIT_TIME = 3
FS_LEN = 4


@njit(cache=True)
def infection_kernel(
    counts, slot_site, inf_flag, origin,
    thr_table, thr_tail, g_table, g_tail, total_rate, t_end,
    fstate, istate,
    seed, replica, stream,
    horizons, hor_r, hor_m,
    guard_width, exit_half,
    path_cap, path_t, path_r, path_len,
):
    n_sites = counts.shape[0]
    n_slots = slot_site.shape[0]
    k0, k1 = split_seed(seed)
    rep = np.uint64(replica)
    st = np.uint64(stream)
    idx = np.uint64(istate[IS_IDX])
    t = fstate[FS_T]
    front = istate[IS_FRONT]
    n_hor = horizons.shape[0]
    guard_lo = (n_sites - n_sites // 2) - guard_width

    front_site = _wrap(origin + front, n_sites)
    k_front = counts[front_site]
    integrand = 0.5 * _g_of(k_front, g_table, g_tail) if k_front >= 2 else 0.0

    while True:
        u_dt, u_pick, u_acc = draw_candidate(idx, rep, st, k0, k1)
        idx += U1
        if fstate[FS_NEXT_DT] < 0.0:
            fstate[FS_NEXT_DT] = -np.log1p(-u_dt) / total_rate
        t_next = t + fstate[FS_NEXT_DT]
        bound = t_next if t_next < t_end else t_end

        hi = istate[IS_HOR_IDX]
        while hi < n_hor and horizons[hi] <= bound:
            hor_r[hi] = front
            hor_m[hi] = front - (fstate[FS_INTEGRAL] + (horizons[hi] - t) * integrand)
            hi += 1
        istate[IS_HOR_IDX] = hi

        fstate[FS_INTEGRAL] += (bound - t) * integrand

        if t_next >= t_end:
            fstate[FS_T] = t_end
            fstate[FS_NEXT_DT] = t_next - t_end
            istate[IS_FRONT] = front
            istate[IS_IDX] = np.int64(idx)
            return DONE

        t = t_next
        fstate[FS_NEXT_DT] = -1.0

        p, x, n, h = _decompose_pick(u_pick, n_slots, slot_site, counts)
        if u_acc > _thr(n, thr_table, thr_tail):
            continue

        y = _wrap(x + h, n_sites)
        mover_inf = inf_flag[x]

        counts[x] -= 1
        if counts[x] == 0:
            inf_flag[x] = 0
        if counts[y] == 0:
            inf_flag[y] = mover_inf
        elif mover_inf == 1:
            inf_flag[y] = 1
        counts[y] += 1
        slot_site[p] = y

        # Escape guard: infected mass in the band opposite the origin means
        # wrap-around could corrupt the front; the replica is flagged.
        if inf_flag[y] == 1 and _coord(y, origin, n_sites) >= guard_lo:
            istate[IS_ESCAPED] = 1

        front_moved = False
        if x == front_site:
            if h == 1 and mover_inf == 1:
                front += 1
                front_moved = True
            elif h == -1 and counts[x] == 0:
                front -= 1
                front_moved = True

        if front_moved:
            front_site = _wrap(origin + front, n_sites)
            if inf_flag[front_site] != 1:
                istate[IS_VIOLATIONS] += 1
            if front > istate[IS_SUP]:
                istate[IS_SUP] = front
            if front < istate[IS_INF]:
                istate[IS_INF] = front
            if istate[IS_EXIT_SIDE] == 0 and exit_half > 0:
                if front > exit_half:
                    istate[IS_EXIT_SIDE] = 1
                    fstate[FS_EXIT_TIME] = t
                elif front < -exit_half:
                    istate[IS_EXIT_SIDE] = -1
                    fstate[FS_EXIT_TIME] = t
            if path_cap > 0:
                li = path_len[0]
                if li >= path_cap:
                    fstate[FS_T] = t
                    fstate[FS_NEXT_DT] = 0.0
                    istate[IS_FRONT] = front
                    istate[IS_IDX] = np.int64(idx)
                    return LOG_FULL
                path_t[li] = t
                path_r[li] = front
                path_len[0] = li + 1

        if x == front_site or y == front_site or front_moved:
            k_front = counts[front_site]
            integrand = 0.5 * _g_of(k_front, g_table, g_tail) if k_front >= 2 else 0.0


# ---------------------------------------------------------------------------
# Basic monotone pair engine: one mark field read at both occupancies.
#
# counts is the lower process, counts_hi the higher one; slots cover the
# particles of the higher process.  A mark with n <= counts(x) moves one
# particle in both processes, otherwise only in the higher one, so sitewise
# domination is preserved by construction (violations are still counted).
# Optional path trackers implement allowed-path statistics: a path may move
# only when the higher process jumps from its current site, and the window
# statistic accumulates time where the lower process carries >= 2 particles
# within distance R of the path.
# ---------------------------------------------------------------------------

PATH_ALWAYS_LEFT = 0
PATH_ALWAYS_RIGHT = 1
PATH_GREEDY = 2


@njit(cache=True)
def _window_sum(counts, center, radius, origin, n_sites):
    s = 0
    for c in range(center - radius, center + radius + 1):
        s += counts[_wrap(origin + c, n_sites)]
    return s


@njit(cache=True)
def pair_kernel(
    counts, counts_hi, slot_site, origin, torus,
    thr_table, thr_tail, total_rate, t_end,
    fstate,            # float64[2]: t, pending gap
    rstate,            # int64[1]: draw index
    seed, replica, stream,
    snap_times, snap_lo, snap_hi, snap_idx,
    violations,
    path_policy, path_pos, path_clamp, path_watch, path_wsum,
    path_vtime, path_exceed_t, radius,
):
    n_sites = counts.shape[0]
    n_slots = slot_site.shape[0]
    k0, k1 = split_seed(seed)
    rep = np.uint64(replica)
    st = np.uint64(stream)
    idx = np.uint64(rstate[0])
    t = fstate[0]
    si = snap_idx[0]
    n_snap = snap_times.shape[0]
    n_paths = path_policy.shape[0]

    if n_slots == 0 or total_rate <= 0.0:
        while si < n_snap:
            snap_lo[si, :] = counts
            snap_hi[si, :] = counts_hi
            si += 1
        snap_idx[0] = si
        fstate[0] = t_end
        return DONE

    while True:
        u_dt, u_pick, u_acc = draw_candidate(idx, rep, st, k0, k1)
        idx += U1
        if fstate[1] < 0.0:
            fstate[1] = -np.log1p(-u_dt) / total_rate
        t_next = t + fstate[1]
        bound = t_next if t_next < t_end else t_end

        while si < n_snap and snap_times[si] <= bound:
            snap_lo[si, :] = counts
            snap_hi[si, :] = counts_hi
            si += 1

        for q in range(n_paths):
            if path_wsum[q] >= 2:
                path_vtime[q] += bound - t

        if t_next >= t_end:
            fstate[0] = t_end
            fstate[1] = t_next - t_end
            rstate[0] = np.int64(idx)
            snap_idx[0] = si
            return DONE

        t = t_next
        fstate[1] = -1.0

        p, x, n, h = _decompose_pick(u_pick, n_slots, slot_site, counts_hi)
        if u_acc > _thr(n, thr_table, thr_tail):
            continue

        y = x + h
        if torus:
            y = _wrap(y, n_sites)
        elif not (0 <= y < n_sites):
            continue

        both = n <= counts[x]
        counts_hi[x] -= 1
        counts_hi[y] += 1
        slot_site[p] = y
        cx = _coord(x, origin, n_sites)
        if both:
            counts[x] -= 1
            counts[y] += 1
            cy = _coord(y, origin, n_sites)
            for q in range(n_paths):
                if abs(cx - path_pos[q]) <= radius:
                    path_wsum[q] -= 1
                if abs(cy - path_pos[q]) <= radius:
                    path_wsum[q] += 1
        if counts[x] > counts_hi[x] or counts[y] > counts_hi[y]:
            violations[0] += 1

        # Paths move only on jumps of the higher process from their site.
        for q in range(n_paths):
            if path_pos[q] != cx:
                continue
            pol = path_policy[q]
            newpos = path_pos[q]
            if pol == PATH_ALWAYS_LEFT:
                cand = path_pos[q] - 1
                if cand >= -path_clamp[q]:
                    newpos = cand
            elif pol == PATH_ALWAYS_RIGHT:
                cand = path_pos[q] + 1
                if cand <= path_clamp[q]:
                    newpos = cand
            else:
                best = path_wsum[q]
                for step in (-1, 1):
                    cand = path_pos[q] + step
                    if abs(cand) > path_clamp[q]:
                        continue
                    w = _window_sum(counts, cand, radius, origin, n_sites)
                    if w < best:
                        best = w
                        newpos = cand
            if newpos != path_pos[q]:
                path_pos[q] = newpos
                path_wsum[q] = _window_sum(counts, newpos, radius, origin, n_sites)
                if path_exceed_t[q] < 0.0 and abs(newpos) > path_watch[q]:
                    path_exceed_t[q] = t


# ---------------------------------------------------------------------------
# Pile primitives shared by the matching couplings.  Piles are per-site id
# stacks (index 0 = bottom); hpos tracks each id's height index.
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def _pile_remove(pile, cnt, hpos, x, i):
    last = cnt[x] - 1
    for j in range(i, last):
        idj = pile[x, j + 1]
        pile[x, j] = idj
        hpos[idj] = j
    cnt[x] = last


@njit(cache=True, inline="always")
def _pile_insert(pile, cnt, hpos, x, i, pid):
    c = cnt[x]
    if c >= pile.shape[1]:
        return False
    j = c
    while j > i:
        idj = pile[x, j - 1]
        pile[x, j] = idj
        hpos[idj] = j
        j -= 1
    pile[x, i] = pid
    hpos[pid] = i
    cnt[x] = c + 1
    return True


@njit(cache=True, inline="always")
def _slot_move(sl_pile, cnt_from_old, cnt_to_new, slot_site, x, y):
    """Move the top slot of x to y; counts are the post-move pile counts."""
    sid = sl_pile[x, cnt_from_old - 1]
    sl_pile[y, cnt_to_new - 1] = sid
    slot_site[sid] = y


# ---------------------------------------------------------------------------
# Sprinkled matching coupling.
#
# The low-density process reads mark field 2 while unmet and field 1 once
# met; the high-density process reads field 1 only.  Met pairs occupy the
# aligned bottom blocks of both piles, so a field-1 mark at height
# n <= met(x) addresses the same pair in both processes and moves it as one.
# Matchings are rebuilt at the epoch times, preserving met couples:
# same-site pairs first (they meet on the spot and move to the bottoms),
# then leftmost-to-leftmost within each subinterval.
# ---------------------------------------------------------------------------

SP_EPOCH = 0
SP_UNMATCHABLE_EPOCHS = 1
SP_UNMATCHABLE_SUBS = 2
SP_VIOLATIONS = 3
SP_IDX1 = 4
SP_IDX2 = 5
SP_MEETINGS = 6
SP_LEN = 7

SPF_T1 = 0
SPF_T2 = 1
SPF_T = 2
SPF_LEN = 3


@njit(cache=True)
def _match_epoch(
    pile_e, cnt_e, hpos_e, site_e, met_e, partner_e,
    pile_b, cnt_b, hpos_b, partner_b,
    met_cnt, h_lo_site, n_sub, sub_len,
    tmp_e, tmp_b, stats,
):
    # Dissolve partnerships that never met; couples already formed persist.
    for i in range(partner_e.shape[0]):
        if partner_e[i] >= 0 and met_e[i] == 0:
            partner_b[partner_e[i]] = -1
            partner_e[i] = -1
    bad_subs = 0
    for j in range(n_sub):
        x0 = h_lo_site + j * sub_len
        # Same-site first: the largest possible number of pairs per site.
        for x in range(x0, x0 + sub_len):
            while True:
                ne = cnt_e[x] - met_cnt[x]
                nb = cnt_b[x] - met_cnt[x]
                if ne <= 0 or nb <= 0:
                    break
                ide = pile_e[x, met_cnt[x]]
                idb = pile_b[x, met_cnt[x]]
                _pile_remove(pile_e, cnt_e, hpos_e, x, met_cnt[x])
                _pile_remove(pile_b, cnt_b, hpos_b, x, met_cnt[x])
                if not _pile_insert(pile_e, cnt_e, hpos_e, x, 0, ide):
                    return -1
                if not _pile_insert(pile_b, cnt_b, hpos_b, x, 0, idb):
                    return -1
                partner_e[ide] = idb
                partner_b[idb] = ide
                met_e[ide] = 1
                met_cnt[x] += 1
                stats[SP_MEETINGS] += 1
        # Remainder: leftmost unmatched to leftmost unmatched.
        ce = 0
        cb = 0
        for x in range(x0, x0 + sub_len):
            for i in range(met_cnt[x], cnt_e[x]):
                tmp_e[ce] = pile_e[x, i]
                ce += 1
            for i in range(met_cnt[x], cnt_b[x]):
                tmp_b[cb] = pile_b[x, i]
                cb += 1
        npair = ce if ce < cb else cb
        for i in range(npair):
            partner_e[tmp_e[i]] = tmp_b[i]
            partner_b[tmp_b[i]] = tmp_e[i]
        if ce > cb:
            bad_subs += 1
    if bad_subs > 0:
        stats[SP_UNMATCHABLE_EPOCHS] += 1
        stats[SP_UNMATCHABLE_SUBS] += bad_subs
    return 0


@njit(cache=True)
def sprinkled_kernel(
    cnt_e, pile_e, hpos_e, site_e, sl_pile_e, slot_site_e,
    met_e, partner_e, ever_out,
    cnt_b, pile_b, hpos_b, site_b, sl_pile_b, slot_site_b, partner_b,
    met_cnt,
    origin, h_lo_coord, h_hi_coord, h_lo_site, n_sub, sub_len,
    thr_table, thr_tail, rate1, rate2, t_end,
    epochs,
    fstate, stats,
    seed, replica, stream1, stream2,
    tmp_e, tmp_b,
    log_cap, log_t, log_x, log_n, log_h, log_len,
):
    n_sites = cnt_e.shape[0]
    k0, k1 = split_seed(seed)
    rep = np.uint64(replica)
    st1 = np.uint64(stream1)
    st2 = np.uint64(stream2)
    idx1 = np.uint64(stats[SP_IDX1])
    idx2 = np.uint64(stats[SP_IDX2])
    t1 = fstate[SPF_T1]
    t2 = fstate[SPF_T2]
    ep_i = stats[SP_EPOCH]
    n_ep = epochs.shape[0]

    # Pending candidate uniforms per field (drawn together with the gap).
    p1_pick = 0.0
    p1_acc = 0.0
    p2_pick = 0.0
    p2_acc = 0.0
    u_dt, p1_pick, p1_acc = draw_candidate(idx1, rep, st1, k0, k1)
    idx1 += U1
    if t1 < 0.0:
        t1 = -np.log1p(-u_dt) / rate1
    u_dt, p2_pick, p2_acc = draw_candidate(idx2, rep, st2, k0, k1)
    idx2 += U1
    if t2 < 0.0:
        t2 = -np.log1p(-u_dt) / rate2

    while True:
        t_ev = t1 if t1 <= t2 else t2
        bound = t_ev if t_ev < t_end else t_end
        while ep_i < n_ep and epochs[ep_i] <= bound:
            rc = _match_epoch(
                pile_e, cnt_e, hpos_e, site_e, met_e, partner_e,
                pile_b, cnt_b, hpos_b, partner_b,
                met_cnt, h_lo_site, n_sub, sub_len,
                tmp_e, tmp_b, stats,
            )
            if rc != 0:
                return PILE_OVERFLOW
            ep_i += 1
        if t_ev >= t_end:
            fstate[SPF_T1] = t1
            fstate[SPF_T2] = t2
            fstate[SPF_T] = t_end
            stats[SP_EPOCH] = ep_i
            stats[SP_IDX1] = np.int64(idx1)
            stats[SP_IDX2] = np.int64(idx2)
            return DONE

        if t1 <= t2:
            # ---- field 1: drives eta-bar, and met pairs of eta ----
            n_slots = slot_site_b.shape[0]
            scaled = p1_pick * n_slots
            p = np.int64(scaled)
            if p >= n_slots:
                p = n_slots - 1
            x = slot_site_b[p]
            kb = cnt_b[x]
            nh = (scaled - p) * kb
            n = np.int64(nh) + 1
            if n > kb:
                n = kb
            h = -1 if (nh - (n - 1)) < 0.5 else 1
            accept = p1_acc <= _thr(n, thr_table, thr_tail)
            if accept:
                y = _wrap(x + h, n_sites)
                if log_cap > 0:
                    li = log_len[0]
                    if li >= log_cap:
                        return LOG_FULL
                    log_t[li] = t1
                    log_x[li] = x
                    log_n[li] = n
                    log_h[li] = h
                    log_len[0] = li + 1
                if n <= met_cnt[x]:
                    # aligned met pair moves as one, lands at both bottoms
                    ide = pile_e[x, n - 1]
                    idb = pile_b[x, n - 1]
                    if partner_b[idb] != ide or met_e[ide] == 0:
                        stats[SP_VIOLATIONS] += 1
                    _pile_remove(pile_e, cnt_e, hpos_e, x, n - 1)
                    _pile_remove(pile_b, cnt_b, hpos_b, x, n - 1)
                    met_cnt[x] -= 1
                    if not _pile_insert(pile_e, cnt_e, hpos_e, y, 0, ide):
                        return PILE_OVERFLOW
                    if not _pile_insert(pile_b, cnt_b, hpos_b, y, 0, idb):
                        return PILE_OVERFLOW
                    met_cnt[y] += 1
                    site_e[ide] = y
                    site_b[idb] = y
                    _slot_move(sl_pile_e, cnt_e[x] + 1, cnt_e[y], slot_site_e, x, y)
                    _slot_move(sl_pile_b, cnt_b[x] + 1, cnt_b[y], slot_site_b, x, y)
                    cy = _coord(y, origin, n_sites)
                    if cy < h_lo_coord or cy > h_hi_coord:
                        ever_out[ide] = 1
                else:
                    idb = pile_b[x, n - 1]
                    _pile_remove(pile_b, cnt_b, hpos_b, x, n - 1)
                    pe = partner_b[idb]
                    if pe >= 0 and met_e[pe] == 0 and site_e[pe] == y:
                        # meeting: partner found at the next pile
                        _pile_remove(pile_e, cnt_e, hpos_e, y, hpos_e[pe])
                        if not _pile_insert(pile_e, cnt_e, hpos_e, y, 0, pe):
                            return PILE_OVERFLOW
                        if not _pile_insert(pile_b, cnt_b, hpos_b, y, 0, idb):
                            return PILE_OVERFLOW
                        met_e[pe] = 1
                        met_cnt[y] += 1
                        stats[SP_MEETINGS] += 1
                    else:
                        if not _pile_insert(pile_b, cnt_b, hpos_b, y, cnt_b[y], idb):
                            return PILE_OVERFLOW
                    site_b[idb] = y
                    _slot_move(sl_pile_b, cnt_b[x] + 1, cnt_b[y], slot_site_b, x, y)
            u_dt, p1_pick, p1_acc = draw_candidate(idx1, rep, st1, k0, k1)
            idx1 += U1
            t1 += -np.log1p(-u_dt) / rate1
        else:
            # ---- field 2: drives unmet particles of eta ----
            n_slots = slot_site_e.shape[0]
            scaled = p2_pick * n_slots
            p = np.int64(scaled)
            if p >= n_slots:
                p = n_slots - 1
            x = slot_site_e[p]
            ke = cnt_e[x]
            nh = (scaled - p) * ke
            n = np.int64(nh) + 1
            if n > ke:
                n = ke
            h = -1 if (nh - (n - 1)) < 0.5 else 1
            if n > met_cnt[x] and p2_acc <= _thr(n, thr_table, thr_tail):
                y = _wrap(x + h, n_sites)
                ide = pile_e[x, n - 1]
                if met_e[ide] == 1:
                    stats[SP_VIOLATIONS] += 1
                _pile_remove(pile_e, cnt_e, hpos_e, x, n - 1)
                qb = partner_e[ide]
                if qb >= 0 and site_b[qb] == y:
                    _pile_remove(pile_b, cnt_b, hpos_b, y, hpos_b[qb])
                    if not _pile_insert(pile_b, cnt_b, hpos_b, y, 0, qb):
                        return PILE_OVERFLOW
                    if not _pile_insert(pile_e, cnt_e, hpos_e, y, 0, ide):
                        return PILE_OVERFLOW
                    met_e[ide] = 1
                    met_cnt[y] += 1
                    stats[SP_MEETINGS] += 1
                else:
                    if not _pile_insert(pile_e, cnt_e, hpos_e, y, cnt_e[y], ide):
                        return PILE_OVERFLOW
                site_e[ide] = y
                _slot_move(sl_pile_e, cnt_e[x] + 1, cnt_e[y], slot_site_e, x, y)
                cy = _coord(y, origin, n_sites)
                if cy < h_lo_coord or cy > h_hi_coord:
                    ever_out[ide] = 1
            u_dt, p2_pick, p2_acc = draw_candidate(idx2, rep, st2, k0, k1)
            idx2 += U1
            t2 += -np.log1p(-u_dt) / rate2


# ---------------------------------------------------------------------------
# Simultaneous four-process coupling.
#
# Two basic-coupled pairs: system A carries (lower, upper) = (eta, eta')
# with the lower particles layered below the upper-only extras in one pile
# per site, and system B carries (eta-bar, eta-bar') the same way.  System B
# reads mark field 2 exclusively; unmet A-particles read field 1 and met
# A-particles mirror the moves of their B partners.  Met base-base pairs
# occupy aligned bottom blocks of the two base segments (exact heights);
# pairs involving extras sit at the bottom of their own segments and are
# synchronized operationally.  The first half of the epochs matches B-bases
# into A-bases; later epochs additionally match all remaining A particles
# into B particles.
# ---------------------------------------------------------------------------

SM_EPOCH = 0
SM_UNMATCHABLE_T1 = 1
SM_UNMATCHABLE_T2 = 2
SM_VIOLATIONS = 3
SM_IDX1 = 4
SM_IDX2 = 5
SM_MEETINGS = 6
SM_LEN = 7


@njit(cache=True, inline="always")
def _seg_remove(pile, cnt, base, hpos, x, i):
    if i < base[x]:
        base[x] -= 1
    _pile_remove(pile, cnt, hpos, x, i)


@njit(cache=True, inline="always")
def _seg_insert(pile, cnt, base, hpos, x, pos, pid, is_base):
    ok = _pile_insert(pile, cnt, hpos, x, pos, pid)
    if is_base:
        base[x] += 1
    return ok


@njit(cache=True)
def _make_met_sim(
    pile_a, cnt_a, base_a, hpos_a, site_a, met_a, partner_a, nbase_a,
    pile_b, cnt_b, base_b, hpos_b, site_b, met_b, partner_b, nbase_b,
    met_bb, x, ida, idb, stats,
):
    """Reposition a freshly met pair at shared site x and lock it."""
    a_base = ida < nbase_a
    b_base = idb < nbase_b
    _seg_remove(pile_a, cnt_a, base_a, hpos_a, x, hpos_a[ida])
    _seg_remove(pile_b, cnt_b, base_b, hpos_b, x, hpos_b[idb])
    if a_base and b_base:
        ok1 = _seg_insert(pile_a, cnt_a, base_a, hpos_a, x, 0, ida, True)
        ok2 = _seg_insert(pile_b, cnt_b, base_b, hpos_b, x, 0, idb, True)
        met_bb[x] += 1
    else:
        pos_a = met_bb[x] if a_base else base_a[x]
        ok1 = _seg_insert(pile_a, cnt_a, base_a, hpos_a, x, pos_a, ida, a_base)
        pos_b = met_bb[x] if b_base else base_b[x]
        ok2 = _seg_insert(pile_b, cnt_b, base_b, hpos_b, x, pos_b, idb, b_base)
    met_a[ida] = 1
    met_b[idb] = 1
    partner_a[ida] = idb
    partner_b[idb] = ida
    stats[SM_MEETINGS] += 1
    return ok1 and ok2


@njit(cache=True)
def _match_epoch_sim(
    pile_a, cnt_a, base_a, hpos_a, site_a, met_a, partner_a, nbase_a,
    pile_b, cnt_b, base_b, hpos_b, site_b, met_b, partner_b, nbase_b,
    met_bb, h_lo_site, n_sub, sub_len, tiers,
    tmp_a, tmp_b, stats,
):
    for i in range(partner_a.shape[0]):
        if partner_a[i] >= 0 and met_a[i] == 0:
            partner_b[partner_a[i]] = -1
            partner_a[i] = -1
    bad1 = 0
    bad2 = 0
    for j in range(n_sub):
        x0 = h_lo_site + j * sub_len
        # ---- tier 1: B bases matched into A bases ----
        for x in range(x0, x0 + sub_len):
            while True:
                ida = np.int64(-1)
                for i in range(met_bb[x], base_a[x]):
                    cand = pile_a[x, i]
                    if met_a[cand] == 0 and partner_a[cand] < 0:
                        ida = cand
                        break
                if ida < 0:
                    break
                idb = np.int64(-1)
                for i in range(met_bb[x], base_b[x]):
                    cand = pile_b[x, i]
                    if met_b[cand] == 0 and partner_b[cand] < 0:
                        idb = cand
                        break
                if idb < 0:
                    break
                if not _make_met_sim(
                    pile_a, cnt_a, base_a, hpos_a, site_a, met_a, partner_a, nbase_a,
                    pile_b, cnt_b, base_b, hpos_b, site_b, met_b, partner_b, nbase_b,
                    met_bb, x, ida, idb, stats,
                ):
                    return -1
        ca = 0
        cb = 0
        for x in range(x0, x0 + sub_len):
            for i in range(met_bb[x], base_a[x]):
                cand = pile_a[x, i]
                if met_a[cand] == 0 and partner_a[cand] < 0:
                    tmp_a[ca] = cand
                    ca += 1
            for i in range(met_bb[x], base_b[x]):
                cand = pile_b[x, i]
                if met_b[cand] == 0 and partner_b[cand] < 0:
                    tmp_b[cb] = cand
                    cb += 1
        npair = ca if ca < cb else cb
        for i in range(npair):
            partner_a[tmp_a[i]] = tmp_b[i]
            partner_b[tmp_b[i]] = tmp_a[i]
        if cb > ca:
            bad1 += 1
        if tiers < 2:
            continue
        # ---- tier 2: every remaining A particle matched into B ----
        for x in range(x0, x0 + sub_len):
            while True:
                ida = np.int64(-1)
                for i in range(met_bb[x], cnt_a[x]):
                    cand = pile_a[x, i]
                    if met_a[cand] == 0 and partner_a[cand] < 0:
                        ida = cand
                        break
                if ida < 0:
                    break
                idb = np.int64(-1)
                for i in range(met_bb[x], cnt_b[x]):
                    cand = pile_b[x, i]
                    if met_b[cand] == 0 and partner_b[cand] < 0:
                        idb = cand
                        break
                if idb < 0:
                    break
                if not _make_met_sim(
                    pile_a, cnt_a, base_a, hpos_a, site_a, met_a, partner_a, nbase_a,
                    pile_b, cnt_b, base_b, hpos_b, site_b, met_b, partner_b, nbase_b,
                    met_bb, x, ida, idb, stats,
                ):
                    return -1
        ca = 0
        cb = 0
        for x in range(x0, x0 + sub_len):
            for i in range(met_bb[x], cnt_a[x]):
                cand = pile_a[x, i]
                if met_a[cand] == 0 and partner_a[cand] < 0:
                    tmp_a[ca] = cand
                    ca += 1
            for i in range(met_bb[x], cnt_b[x]):
                cand = pile_b[x, i]
                if met_b[cand] == 0 and partner_b[cand] < 0:
                    tmp_b[cb] = cand
                    cb += 1
        npair = ca if ca < cb else cb
        for i in range(npair):
            partner_a[tmp_a[i]] = tmp_b[i]
            partner_b[tmp_b[i]] = tmp_a[i]
        if ca > cb:
            bad2 += 1
    stats[SM_UNMATCHABLE_T1] += bad1
    stats[SM_UNMATCHABLE_T2] += bad2
    return 0


@njit(cache=True)
def simultaneous_kernel(
    # system A = (eta, eta'), base ids < nbase_a
    cnt_a, base_a, pile_a, hpos_a, site_a, sl_pile_a, slot_site_a,
    met_a, partner_a, nbase_a,
    # system B = (eta-bar, eta-bar'), base ids < nbase_b
    cnt_b, base_b, pile_b, hpos_b, site_b, sl_pile_b, slot_site_b,
    met_b, partner_b, nbase_b,
    met_bb,
    h_lo_site, n_sub, sub_len,
    thr_table, thr_tail, rate1, rate2, t_end,
    epochs, n_phase1,
    fstate, stats,
    seed, replica, stream1, stream2,
    tmp_a, tmp_b,
):
    n_sites = cnt_a.shape[0]
    k0, k1 = split_seed(seed)
    rep = np.uint64(replica)
    st1 = np.uint64(stream1)
    st2 = np.uint64(stream2)
    idx1 = np.uint64(stats[SM_IDX1])
    idx2 = np.uint64(stats[SM_IDX2])
    t1 = fstate[0]
    t2 = fstate[1]
    ep_i = stats[SM_EPOCH]
    n_ep = epochs.shape[0]

    u_dt, p1_pick, p1_acc = draw_candidate(idx1, rep, st1, k0, k1)
    idx1 += U1
    if t1 < 0.0:
        t1 = -np.log1p(-u_dt) / rate1
    u_dt, p2_pick, p2_acc = draw_candidate(idx2, rep, st2, k0, k1)
    idx2 += U1
    if t2 < 0.0:
        t2 = -np.log1p(-u_dt) / rate2

    while True:
        t_ev = t1 if t1 <= t2 else t2
        bound = t_ev if t_ev < t_end else t_end
        while ep_i < n_ep and epochs[ep_i] <= bound:
            tiers = 1 if ep_i < n_phase1 else 2
            rc = _match_epoch_sim(
                pile_a, cnt_a, base_a, hpos_a, site_a, met_a, partner_a, nbase_a,
                pile_b, cnt_b, base_b, hpos_b, site_b, met_b, partner_b, nbase_b,
                met_bb, h_lo_site, n_sub, sub_len, tiers,
                tmp_a, tmp_b, stats,
            )
            if rc != 0:
                return PILE_OVERFLOW
            ep_i += 1
        if t_ev >= t_end:
            fstate[0] = t1
            fstate[1] = t2
            stats[SM_EPOCH] = ep_i
            stats[SM_IDX1] = np.int64(idx1 - U1)
            stats[SM_IDX2] = np.int64(idx2 - U1)
            return DONE

        if t1 <= t2:
            # ---- field 1: unmet A particles ----
            n_slots = slot_site_a.shape[0]
            scaled = p1_pick * n_slots
            p = np.int64(scaled)
            if p >= n_slots:
                p = n_slots - 1
            x = slot_site_a[p]
            ka = cnt_a[x]
            nh = (scaled - p) * ka
            n = np.int64(nh) + 1
            if n > ka:
                n = ka
            h = -1 if (nh - (n - 1)) < 0.5 else 1
            ida = pile_a[x, n - 1]
            if met_a[ida] == 0 and p1_acc <= _thr(n, thr_table, thr_tail):
                y = _wrap(x + h, n_sites)
                a_base = ida < nbase_a
                _seg_remove(pile_a, cnt_a, base_a, hpos_a, x, n - 1)
                site_a[ida] = y
                pb = partner_a[ida]
                if pb >= 0 and site_b[pb] == y:
                    # place provisionally, then lock via the met helper
                    if not _seg_insert(pile_a, cnt_a, base_a, hpos_a, y,
                                       base_a[y] if a_base else cnt_a[y], ida, a_base):
                        return PILE_OVERFLOW
                    if not _make_met_sim(
                        pile_a, cnt_a, base_a, hpos_a, site_a, met_a, partner_a, nbase_a,
                        pile_b, cnt_b, base_b, hpos_b, site_b, met_b, partner_b, nbase_b,
                        met_bb, y, ida, pb, stats,
                    ):
                        return PILE_OVERFLOW
                else:
                    if not _seg_insert(pile_a, cnt_a, base_a, hpos_a, y,
                                       base_a[y] if a_base else cnt_a[y], ida, a_base):
                        return PILE_OVERFLOW
                _slot_move(sl_pile_a, cnt_a[x] + 1, cnt_a[y], slot_site_a, x, y)
            u_dt, p1_pick, p1_acc = draw_candidate(idx1, rep, st1, k0, k1)
            idx1 += U1
            t1 += -np.log1p(-u_dt) / rate1
        else:
            # ---- field 2: system B, mirrored by met A partners ----
            n_slots = slot_site_b.shape[0]
            scaled = p2_pick * n_slots
            p = np.int64(scaled)
            if p >= n_slots:
                p = n_slots - 1
            x = slot_site_b[p]
            kb = cnt_b[x]
            nh = (scaled - p) * kb
            n = np.int64(nh) + 1
            if n > kb:
                n = kb
            h = -1 if (nh - (n - 1)) < 0.5 else 1
            if p2_acc <= _thr(n, thr_table, thr_tail):
                y = _wrap(x + h, n_sites)
                idb = pile_b[x, n - 1]
                b_base = idb < nbase_b
                if n <= met_bb[x]:
                    # aligned met base-base pair moves as one
                    ida = pile_a[x, n - 1]
                    if partner_b[idb] != ida:
                        stats[SM_VIOLATIONS] += 1
                    _seg_remove(pile_a, cnt_a, base_a, hpos_a, x, n - 1)
                    _seg_remove(pile_b, cnt_b, base_b, hpos_b, x, n - 1)
                    met_bb[x] -= 1
                    if not _seg_insert(pile_a, cnt_a, base_a, hpos_a, y, 0, ida, True):
                        return PILE_OVERFLOW
                    if not _seg_insert(pile_b, cnt_b, base_b, hpos_b, y, 0, idb, True):
                        return PILE_OVERFLOW
                    met_bb[y] += 1
                    site_a[ida] = y
                    site_b[idb] = y
                    _slot_move(sl_pile_a, cnt_a[x] + 1, cnt_a[y], slot_site_a, x, y)
                    _slot_move(sl_pile_b, cnt_b[x] + 1, cnt_b[y], slot_site_b, x, y)
                elif met_b[idb] == 1:
                    # mixed met pair: mirror the A partner
                    ida = partner_b[idb]
                    if site_a[ida] != x:
                        stats[SM_VIOLATIONS] += 1
                    a_base = ida < nbase_a
                    _seg_remove(pile_b, cnt_b, base_b, hpos_b, x, n - 1)
                    _seg_remove(pile_a, cnt_a, base_a, hpos_a, x, hpos_a[ida])
                    pos_b = met_bb[y] if b_base else base_b[y]
                    if not _seg_insert(pile_b, cnt_b, base_b, hpos_b, y, pos_b, idb, b_base):
                        return PILE_OVERFLOW
                    pos_a = met_bb[y] if a_base else base_a[y]
                    if not _seg_insert(pile_a, cnt_a, base_a, hpos_a, y, pos_a, ida, a_base):
                        return PILE_OVERFLOW
                    site_a[ida] = y
                    site_b[idb] = y
                    _slot_move(sl_pile_a, cnt_a[x] + 1, cnt_a[y], slot_site_a, x, y)
                    _slot_move(sl_pile_b, cnt_b[x] + 1, cnt_b[y], slot_site_b, x, y)
                else:
                    # lone B move + meeting check
                    _seg_remove(pile_b, cnt_b, base_b, hpos_b, x, n - 1)
                    site_b[idb] = y
                    pa = partner_b[idb]
                    if not _seg_insert(pile_b, cnt_b, base_b, hpos_b, y,
                                       base_b[y] if b_base else cnt_b[y], idb, b_base):
                        return PILE_OVERFLOW
                    if pa >= 0 and met_a[pa] == 0 and site_a[pa] == y:
                        if not _make_met_sim(
                            pile_a, cnt_a, base_a, hpos_a, site_a, met_a, partner_a, nbase_a,
                            pile_b, cnt_b, base_b, hpos_b, site_b, met_b, partner_b, nbase_b,
                            met_bb, y, pa, idb, stats,
                        ):
                            return PILE_OVERFLOW
                    _slot_move(sl_pile_b, cnt_b[x] + 1, cnt_b[y], slot_site_b, x, y)
            u_dt, p2_pick, p2_acc = draw_candidate(idx2, rep, st2, k0, k1)
            idx2 += U1
            t2 += -np.log1p(-u_dt) / rate2
