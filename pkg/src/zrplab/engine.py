"""Wrappers around the compiled kernels: state assembly, sizing, results.

Everything here is deterministic given (master seed, replica): initial
configurations are drawn from the replica's init stream, mark fields from
the replica's mark streams, so any replica can be reproduced in isolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from . import rng
from .errors import FrontEscaped, RateFunctionError, TableOverflow
from .rates import (
    RateFunction,
    conditioned_marginal_cdf,
    fugacity_of_density,
    marginal_pmf,
)

GUARD_WIDTH = 8
DOMAIN_FACTOR = 4.0
DOMAIN_WINDOW = 64


def domain_size(rate: RateFunction, t_end: float, window: int = DOMAIN_WINDOW,
                factor: float = DOMAIN_FACTOR) -> int:
    """Torus size policy: finite-domain stand-in for the infinite lattice.

    Propagation beyond gamma_plus * t + u is exponentially unlikely, so a
    torus of factor * (gamma_plus * t + window) sites keeps truncation
    artifacts below Monte Carlo resolution at desk scale.
    """
    n = int(math.ceil(factor * (rate.gamma_plus * t_end + window)))
    return n + (n % 2)


def thinning_tables(rate: RateFunction, n_max: int = 256):
    thr = rate.thinning_thresholds(n_max)
    thr_tail = rate.gamma_tail / rate.gamma_plus
    g_table = rate.g(np.arange(n_max + 1)).astype(np.float64)
    return thr, thr_tail, g_table, rate.gamma_tail


# Marginal tables are pure functions of (rate, rho); the inverse-fugacity
# bisection behind them is far too slow to repeat per replica.
_CDF_CACHE: dict = {}


def marginal_cdf(rate: RateFunction, rho: float) -> np.ndarray:
    key = (id(rate), float(rho))
    hit = _CDF_CACHE.get(key)
    if hit is not None and hit[0] is rate:
        return hit[1]
    if rho == 0.0:
        cdf = np.array([1.0])
    else:
        phi = fugacity_of_density(rate, rho)
        cdf = np.cumsum(marginal_pmf(rate, phi))
    _CDF_CACHE[key] = (rate, cdf)
    return cdf


def draw_product_config(rate, rho, n_sites, seed, replica,
                        stream=rng.STREAM_INIT, start_idx=0,
                        conditioned_site=None, min_occupancy=1):
    """Sitewise independent draw from mu_rho; optionally condition one site.

    Returns (counts, next_start_idx); the draw index bookkeeping keeps
    subsequent draws on the same stream non-overlapping.
    """
    counts = np.zeros(n_sites, dtype=np.int64)
    if rho > 0.0:
        cdf = marginal_cdf(rate, rho)
        u = rng.uniforms(seed, replica, stream, n_sites, start_idx)
        counts[:] = np.searchsorted(cdf, u, side="right")
    start_idx += n_sites
    if conditioned_site is not None:
        key = (id(rate), float(rho), int(min_occupancy), "cond")
        hit = _CDF_CACHE.get(key)
        if hit is not None and hit[0] is rate:
            ccdf = hit[1]
        else:
            ccdf = conditioned_marginal_cdf(rate, rho, min_occupancy)
            _CDF_CACHE[key] = (rate, ccdf)
        u = rng.uniforms(seed, replica, stream, 1, start_idx)
        counts[conditioned_site] = np.searchsorted(ccdf, u[0], side="right")
        start_idx += 1
    return counts, start_idx


def slots_for(counts: np.ndarray) -> np.ndarray:
    return np.repeat(np.arange(len(counts), dtype=np.int64), counts)


# ---------------------------------------------------------------------------
# counts engine
# ---------------------------------------------------------------------------

_EMPTY_F8 = np.zeros(0)
_EMPTY_I8 = np.zeros(0, np.int64)
_EMPTY_U1 = np.zeros(0, np.uint8)
_NO_BOXES = (np.zeros((0, 4)), np.zeros(0, np.int64), np.zeros(0, np.int64),
             np.zeros(0, np.int64), np.zeros(0))


@dataclass
class EventLog:
    t: np.ndarray
    x: np.ndarray
    n: np.ndarray
    u: np.ndarray
    h: np.ndarray
    accepted: np.ndarray

    def __len__(self):
        return len(self.t)


@dataclass
class CountsRun:
    counts: np.ndarray
    snapshot_times: np.ndarray
    snapshots: np.ndarray
    events: EventLog | None
    watch_max: int
    box_max: np.ndarray
    box_integral: np.ndarray
    n_draws: int
    initial_total: int

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def run_counts(rate, counts0, t_end, seed, replica, *,
               stream=rng.STREAM_MARKS, torus=True,
               snapshot_times=(), log_events=False, log_cap=None,
               watch_site=-1, boxes=None) -> CountsRun:
    counts = np.asarray(counts0, dtype=np.int64).copy()
    slots = slots_for(counts)
    m = len(slots)
    thr, thr_tail, _, _ = thinning_tables(rate)
    total_rate = rate.gamma_plus * m
    fstate = np.array([0.0, -1.0])
    rstate = np.zeros(1, np.int64)
    snap_times = np.asarray(sorted(snapshot_times), dtype=np.float64)
    snap_out = np.zeros((len(snap_times), len(counts)), np.int64)
    snap_idx = np.zeros(1, np.int64)
    if log_events:
        cap = log_cap or int(total_rate * t_end + 10 * math.sqrt(total_rate * t_end + 1) + 256)
        log_t = np.zeros(cap)
        log_x = np.zeros(cap, np.int64)
        log_n = np.zeros(cap, np.int64)
        log_u = np.zeros(cap)
        log_h = np.zeros(cap, np.int64)
        log_acc = np.zeros(cap, np.uint8)
    else:
        cap = 0
        log_t, log_u = _EMPTY_F8, _EMPTY_F8
        log_x, log_n, log_h = _EMPTY_I8, _EMPTY_I8, _EMPTY_I8
        log_acc = _EMPTY_U1
    log_len = np.zeros(1, np.int64)
    watch_max = np.zeros(1, np.int64)
    if watch_site >= 0:
        watch_max[0] = counts[watch_site]
    if boxes is None:
        box_arr, box_state, box_cur, box_max, box_int = _NO_BOXES
    else:
        box_arr = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
        nb = len(box_arr)
        box_state = np.zeros(nb, np.int64)
        box_cur = np.zeros(nb, np.int64)
        box_max = np.zeros(nb, np.int64)
        box_int = np.zeros(nb)

    status = K.counts_kernel(
        counts, slots, torus, thr, thr_tail, total_rate, float(t_end),
        fstate, rstate, np.uint64(seed), np.uint64(replica), np.uint64(stream),
        snap_times, snap_out, snap_idx,
        cap, log_t, log_x, log_n, log_u, log_h, log_acc, log_len,
        watch_site, watch_max,
        box_arr, box_state, box_cur, box_max, box_int,
    )
    if status == K.LOG_FULL:
        raise TableOverflow("event log capacity exhausted; raise log_cap")
    if status == K.TABLE_OVERFLOW:
        raise TableOverflow(
            "occupancy exceeded the rate table and no tail rule is configured"
        )
    events = None
    if log_events:
        sl = slice(0, int(log_len[0]))
        events = EventLog(log_t[sl].copy(), log_x[sl].copy(), log_n[sl].copy(),
                          log_u[sl].copy(), log_h[sl].copy(), log_acc[sl].copy())
    return CountsRun(
        counts=counts, snapshot_times=snap_times, snapshots=snap_out,
        events=events, watch_max=int(watch_max[0]),
        box_max=box_max, box_integral=box_int,
        n_draws=int(rstate[0]), initial_total=m,
    )


# ---------------------------------------------------------------------------
# infection engine
# ---------------------------------------------------------------------------

@dataclass
class InfectionRun:
    counts: np.ndarray
    inf_flag: np.ndarray
    front: int
    sup: int
    inf: int
    escaped: bool
    violations: int
    horizons: np.ndarray
    front_at: np.ndarray
    martingale_at: np.ndarray
    integral: float
    exit_side: int
    exit_time: float
    path_t: np.ndarray | None = None
    path_r: np.ndarray | None = None


def _require_tail(rate):
    if not np.isfinite(rate.gamma_tail):
        raise RateFunctionError("this engine requires a rate with a tail rule")


def run_infection(rate, counts0, inf_flag0, t_end, seed, replica, *,
                  origin, stream=rng.STREAM_MARKS,
                  horizons=(), exit_half=0, guard_width=GUARD_WIDTH,
                  record_path=False, path_cap=None,
                  front0=0) -> InfectionRun:
    _require_tail(rate)
    counts = np.asarray(counts0, dtype=np.int64).copy()
    inf_flag = np.asarray(inf_flag0, dtype=np.uint8).copy()
    slots = slots_for(counts)
    m = len(slots)
    if m == 0:
        raise RateFunctionError("infection run requires a non-empty configuration")
    thr, thr_tail, g_table, g_tail = thinning_tables(rate)
    total_rate = rate.gamma_plus * m
    fstate = np.zeros(K.FS_LEN)
    fstate[K.FS_NEXT_DT] = -1.0
    istate = np.zeros(K.IS_LEN, np.int64)
    istate[K.IS_FRONT] = front0
    istate[K.IS_SUP] = front0
    istate[K.IS_INF] = front0
    hor = np.asarray(sorted(horizons), dtype=np.float64)
    hor_r = np.zeros(len(hor), np.int64)
    hor_m = np.zeros(len(hor))
    if record_path:
        cap = path_cap or int(40 * (t_end + 4) * max(1.0, rate.gamma_plus) + 256)
        path_t = np.zeros(cap)
        path_r = np.zeros(cap, np.int64)
    else:
        cap = 0
        path_t, path_r = _EMPTY_F8, _EMPTY_I8
    path_len = np.zeros(1, np.int64)

    status = K.infection_kernel(
        counts, slots, inf_flag, origin,
        thr, thr_tail, g_table, g_tail, total_rate, float(t_end),
        fstate, istate, np.uint64(seed), np.uint64(replica), np.uint64(stream),
        hor, hor_r, hor_m,
        guard_width, exit_half,
        cap, path_t, path_r, path_len,
    )
    if status == K.LOG_FULL:
        raise TableOverflow("front path capacity exhausted; raise path_cap")
    out_path_t = out_path_r = None
    if record_path:
        sl = slice(0, int(path_len[0]))
        out_path_t, out_path_r = path_t[sl].copy(), path_r[sl].copy()
    return InfectionRun(
        counts=counts, inf_flag=inf_flag,
        front=int(istate[K.IS_FRONT]), sup=int(istate[K.IS_SUP]),
        inf=int(istate[K.IS_INF]), escaped=bool(istate[K.IS_ESCAPED]),
        violations=int(istate[K.IS_VIOLATIONS]),
        horizons=hor, front_at=hor_r, martingale_at=hor_m,
        integral=float(fstate[K.FS_INTEGRAL]),
        exit_side=int(istate[K.IS_EXIT_SIDE]), exit_time=float(fstate[K.FS_EXIT_TIME]),
        path_t=out_path_t, path_r=out_path_r,
    )


def infection_left_buffer(rate: RateFunction, t_end: float) -> int:
    """Clearance between the infected window and the torus seam.

    The infected cluster's left edge travels ballistically leftward (the
    mirror image of the right front, empirically ~0.5 gamma_plus), so the
    buffer is one full gamma_plus * t plus a fluctuation term; the escape
    guard then fires only on genuinely corrupted replicas.
    """
    return int(math.ceil(rate.gamma_plus * t_end
                         + 6.0 * math.sqrt(rate.gamma_plus * t_end + 1.0))) + 32


def standard_infection_start(rate, rho, n_sites, seed, replica, *,
                             t_end=None, condition_front=True):
    """Stationary configuration with the left window of the origin infected.

    On the infinite lattice everything left of the origin starts infected;
    on the torus the infected window is truncated a buffer short of the
    seam, since particles beyond the buffer cannot reach the front region
    by time t except with exponentially small probability (any replica
    where wrapped infection appears is flagged escaped and excluded).

    Velocity experiments condition on a particle at the origin so the front
    starts exactly there; the conditioned site draw leaves the product law
    of the other sites untouched.
    """
    origin = n_sites // 2
    counts, _ = draw_product_config(
        rate, rho, n_sites, seed, replica,
        conditioned_site=origin if condition_front else None,
    )
    if t_end is None:
        left_edge = -(n_sites // 2) + GUARD_WIDTH + 1
    else:
        left_edge = -(n_sites // 2) + infection_left_buffer(rate, t_end)
    if left_edge > -1:
        raise RateFunctionError(
            f"domain of {n_sites} sites leaves no infected window at "
            f"horizon {t_end}; size it with domain_size()"
        )
    coords = np.arange(n_sites) - origin
    coords[coords >= n_sites - origin] -= n_sites
    inf_flag = ((coords <= 0) & (coords >= left_edge) & (counts > 0)).astype(np.uint8)
    return counts, inf_flag, origin


# ---------------------------------------------------------------------------
# basic monotone pair engine
# ---------------------------------------------------------------------------

@dataclass
class PairRun:
    counts_lo: np.ndarray
    counts_hi: np.ndarray
    snapshot_times: np.ndarray
    snapshots_lo: np.ndarray
    snapshots_hi: np.ndarray
    violations: int
    path_pos: np.ndarray
    path_vfrac: np.ndarray
    path_exceed_t: np.ndarray


def maximal_pair_counts(rate, rho_lo, rho_hi, n_sites, seed, replica, *,
                        stream=rng.STREAM_INIT, start_idx=0):
    """Sitewise maximal coupling of the two marginals, lower <= upper.

    The likelihood ratio of the two marginals is monotone, so the residuals
    after removing the overlap have separated supports and any residual
    draw keeps the order.
    """
    if rho_hi < rho_lo:
        raise RateFunctionError("rho_hi must be >= rho_lo")
    key = (id(rate), float(rho_lo), float(rho_hi), "maximal")
    hit = _CDF_CACHE.get(key)
    if hit is not None and hit[0] is rate:
        alpha, cum_m, cum_res_lo, cum_res_hi = hit[1]
    else:
        p_lo = marginal_pmf(rate, fugacity_of_density(rate, rho_lo)) if rho_lo > 0 else np.array([1.0])
        p_hi = marginal_pmf(rate, fugacity_of_density(rate, rho_hi)) if rho_hi > 0 else np.array([1.0])
        klen = max(len(p_lo), len(p_hi))
        lo = np.zeros(klen)
        hi = np.zeros(klen)
        lo[: len(p_lo)] = p_lo
        hi[: len(p_hi)] = p_hi
        m = np.minimum(lo, hi)
        alpha = m.sum()
        cum_m = np.cumsum(m / alpha)
        res_lo = lo - m
        res_hi = hi - m
        mass = res_lo.sum()
        if mass > 1e-15:
            cum_res_lo = np.cumsum(res_lo / mass)
            cum_res_hi = np.cumsum(res_hi / res_hi.sum())
        else:
            cum_res_lo = cum_m
            cum_res_hi = cum_m
        _CDF_CACHE[key] = (rate, (alpha, cum_m, cum_res_lo, cum_res_hi))
    u = rng.uniforms(seed, replica, stream, 3 * n_sites, start_idx).reshape(n_sites, 3)
    same = u[:, 0] < alpha
    k_same = np.searchsorted(cum_m, u[:, 1], side="right")
    k_lo = np.searchsorted(cum_res_lo, u[:, 1], side="right")
    k_hi = np.searchsorted(cum_res_hi, u[:, 2], side="right")
    counts_lo = np.where(same, k_same, k_lo).astype(np.int64)
    counts_hi = np.where(same, k_same, k_hi).astype(np.int64)
    return counts_lo, counts_hi, start_idx + 3 * n_sites


def run_pair(rate, counts_lo0, counts_hi0, t_end, seed, replica, *,
             stream=rng.STREAM_MARKS, torus=True, origin=None,
             snapshot_times=(), paths=(), radius=0) -> PairRun:
    counts_lo = np.asarray(counts_lo0, dtype=np.int64).copy()
    counts_hi = np.asarray(counts_hi0, dtype=np.int64).copy()
    if np.any(counts_lo > counts_hi):
        raise RateFunctionError("initial configurations must satisfy lower <= upper")
    n_sites = len(counts_lo)
    if origin is None:
        origin = n_sites // 2
    slots = slots_for(counts_hi)
    m = len(slots)
    thr, thr_tail, _, _ = thinning_tables(rate)
    total_rate = rate.gamma_plus * m
    fstate = np.array([0.0, -1.0])
    rstate = np.zeros(1, np.int64)
    snap_times = np.asarray(sorted(snapshot_times), dtype=np.float64)
    snap_lo = np.zeros((len(snap_times), n_sites), np.int64)
    snap_hi = np.zeros_like(snap_lo)
    snap_idx = np.zeros(1, np.int64)
    violations = np.zeros(1, np.int64)
    n_paths = len(paths)
    path_policy = np.zeros(n_paths, np.int64)
    path_pos = np.zeros(n_paths, np.int64)
    path_clamp = np.zeros(n_paths, np.int64)
    path_watch = np.zeros(n_paths, np.int64)
    for i, (policy, pos0, clamp, watch) in enumerate(paths):
        path_policy[i] = policy
        path_pos[i] = pos0
        path_clamp[i] = clamp
        path_watch[i] = watch if watch is not None else np.iinfo(np.int64).max // 2
    path_wsum = np.zeros(n_paths, np.int64)
    for i in range(n_paths):
        c0 = int(path_pos[i])
        idxs = (origin + np.arange(c0 - radius, c0 + radius + 1)) % n_sites
        path_wsum[i] = counts_lo[idxs].sum()
    path_vtime = np.zeros(n_paths)
    path_exceed = np.full(n_paths, -1.0)

    K.pair_kernel(
        counts_lo, counts_hi, slots, origin, torus,
        thr, thr_tail, total_rate, float(t_end),
        fstate, rstate, np.uint64(seed), np.uint64(replica), np.uint64(stream),
        snap_times, snap_lo, snap_hi, snap_idx,
        violations,
        path_policy, path_pos, path_clamp, path_watch, path_wsum,
        path_vtime, path_exceed, radius,
    )
    return PairRun(
        counts_lo=counts_lo, counts_hi=counts_hi,
        snapshot_times=snap_times, snapshots_lo=snap_lo, snapshots_hi=snap_hi,
        violations=int(violations[0]),
        path_pos=path_pos, path_vfrac=path_vtime / max(t_end, 1e-300),
        path_exceed_t=path_exceed,
    )


# ---------------------------------------------------------------------------
# sprinkled matching coupling
# ---------------------------------------------------------------------------

@dataclass
class SprinkledRun:
    counts_lo: np.ndarray
    counts_hi: np.ndarray
    met_cnt: np.ndarray
    domination_ok: bool
    failure_sites: list
    unmet_fraction: float
    unmatchable_epochs: int
    unmatchable_subintervals: int
    b_event: bool
    meetings: int
    violations: int
    met_separation_violations: int
    n_epochs: int
    interval: tuple
    h_interval: tuple
    n_sites: int
    origin: int
    bbar_log: EventLog | None = None


def _build_piles(counts):
    n_sites = len(counts)
    m = int(counts.sum())
    pile = np.full((n_sites, K.PILE_CAP), -1, np.int64)
    hpos = np.zeros(m, np.int64)
    site = np.zeros(m, np.int64)
    nid = 0
    for x in range(n_sites):
        k = counts[x]
        if k > K.PILE_CAP:
            raise TableOverflow(f"initial occupancy {k} exceeds pile capacity")
        for i in range(int(k)):
            pile[x, i] = nid
            hpos[nid] = i
            site[nid] = x
            nid += 1
    sl_pile = pile.copy()
    slot_site = site.copy()
    return pile, hpos, site, sl_pile, slot_site


def coupling_geometry(rate, interval, t):
    """H = I extended by ceil(3 gamma_plus t), padded to subintervals of
    length floor(t^(1/4)); returns coordinates and torus sizing."""
    a, b = int(interval[0]), int(interval[1])
    if b < a:
        raise RateFunctionError("interval must be ordered")
    pad = math.ceil(3.0 * rate.gamma_plus * t)
    h_lo = a - pad
    h_hi = b + pad
    sub_len = max(int(t ** 0.25), 1)
    width = h_hi - h_lo + 1
    n_sub = math.ceil(width / sub_len)
    h_hi = h_lo + n_sub * sub_len - 1
    margin = int(math.ceil(rate.gamma_plus * t)) + 16
    n_sites = h_hi - h_lo + 1 + 2 * margin
    n_sites += n_sites % 2
    return h_lo, h_hi, sub_len, n_sub, n_sites


def run_sprinkled(rate, rho, epsilon, interval, t, seed, replica, *,
                  stream1=rng.STREAM_MARKS, stream2=rng.STREAM_MARKS_2,
                  log_bbar=False) -> SprinkledRun:
    if not (0.0 < epsilon <= 1.0):
        raise RateFunctionError("epsilon must lie in (0, 1]")
    if t < 1.0:
        raise RateFunctionError("horizon t must be >= 1")
    h_lo, h_hi, sub_len, n_sub, n_sites = coupling_geometry(rate, interval, t)
    origin = n_sites // 2
    if h_lo < -origin or h_hi >= n_sites - origin:
        raise RateFunctionError("coupling geometry exceeds the domain")

    counts_e, nxt = draw_product_config(rate, rho, n_sites, seed, replica)
    counts_b, _ = draw_product_config(rate, rho + epsilon, n_sites, seed, replica,
                                      start_idx=nxt)
    m_e = int(counts_e.sum())
    m_b = int(counts_b.sum())

    k_epochs = int(t ** 0.25)
    epochs = np.arange(k_epochs + 1, dtype=np.float64) * t ** 0.75
    epochs = epochs[epochs <= t + 1e-12]

    if m_e == 0:
        # Lower process empty: domination is trivial; evolve only the upper
        # process so its marginal is still exercised.
        return SprinkledRun(
            counts_lo=counts_e, counts_hi=counts_b, met_cnt=np.zeros(n_sites, np.int64),
            domination_ok=True, failure_sites=[], unmet_fraction=0.0,
            unmatchable_epochs=0, unmatchable_subintervals=0, b_event=False,
            meetings=0, violations=0, met_separation_violations=0,
            n_epochs=len(epochs), interval=tuple(interval),
            h_interval=(h_lo, h_hi), n_sites=n_sites, origin=origin,
        )

    pile_e, hpos_e, site_e, sl_pile_e, slot_site_e = _build_piles(counts_e)
    pile_b, hpos_b, site_b, sl_pile_b, slot_site_b = _build_piles(counts_b)
    cnt_e = counts_e.copy()
    cnt_b = counts_b.copy()
    met_e = np.zeros(m_e, np.uint8)
    partner_e = np.full(m_e, -1, np.int64)
    partner_b = np.full(m_b, -1, np.int64)
    met_cnt = np.zeros(n_sites, np.int64)
    coords = np.arange(n_sites) - origin
    coords[coords >= n_sites - origin] -= n_sites
    ever_out = ((coords[site_e] < h_lo) | (coords[site_e] > h_hi)).astype(np.uint8)

    thr, thr_tail, _, _ = thinning_tables(rate)
    rate1 = rate.gamma_plus * m_b
    rate2 = rate.gamma_plus * m_e
    fstate = np.array([-1.0, -1.0, 0.0])
    stats = np.zeros(K.SP_LEN, np.int64)
    tmp_e = np.zeros(m_e + 1, np.int64)
    tmp_b = np.zeros(m_b + 1, np.int64)
    h_lo_site = h_lo + origin

    if log_bbar:
        cap = int(rate1 * t + 10 * math.sqrt(rate1 * t + 1) + 256)
        log_t = np.zeros(cap)
        log_x = np.zeros(cap, np.int64)
        log_n = np.zeros(cap, np.int64)
        log_h = np.zeros(cap, np.int64)
    else:
        cap = 0
        log_t = _EMPTY_F8
        log_x = log_n = log_h = _EMPTY_I8
    log_len = np.zeros(1, np.int64)

    status = K.sprinkled_kernel(
        cnt_e, pile_e, hpos_e, site_e, sl_pile_e, slot_site_e,
        met_e, partner_e, ever_out,
        cnt_b, pile_b, hpos_b, site_b, sl_pile_b, slot_site_b, partner_b,
        met_cnt,
        origin, h_lo, h_hi, h_lo_site, n_sub, sub_len,
        thr, thr_tail, rate1, rate2, float(t),
        epochs, fstate, stats,
        np.uint64(seed), np.uint64(replica), np.uint64(stream1), np.uint64(stream2),
        tmp_e, tmp_b,
        cap, log_t, log_x, log_n, log_h, log_len,
    )
    if status == K.PILE_OVERFLOW:
        raise TableOverflow("pile capacity exceeded in sprinkled coupling")
    if status == K.LOG_FULL:
        raise TableOverflow("event log capacity exceeded in sprinkled coupling")

    a, b = int(interval[0]), int(interval[1])
    i_sites = (origin + np.arange(a, b + 1)) % n_sites
    bad = [int(c) for c in np.arange(a, b + 1)[cnt_e[i_sites] > cnt_b[i_sites]]]
    in_i = cnt_e[i_sites].sum()
    unmet_in_i = (cnt_e[i_sites] - met_cnt[i_sites]).sum()
    sep = 0
    for ide in range(m_e):
        if met_e[ide]:
            if partner_e[ide] < 0 or site_b[partner_e[ide]] != site_e[ide]:
                sep += 1
    site_coord = coords[site_e]
    b_event = bool(np.any((ever_out == 1) & (site_coord >= a) & (site_coord <= b)))
    log = None
    if log_bbar:
        sl = slice(0, int(log_len[0]))
        log = EventLog(log_t[sl].copy(), log_x[sl].copy(), log_n[sl].copy(),
                       np.zeros(int(log_len[0])), log_h[sl].copy(),
                       np.ones(int(log_len[0]), np.uint8))
    return SprinkledRun(
        counts_lo=cnt_e, counts_hi=cnt_b, met_cnt=met_cnt,
        domination_ok=len(bad) == 0, failure_sites=bad,
        unmet_fraction=float(unmet_in_i / in_i) if in_i else 0.0,
        unmatchable_epochs=int(stats[K.SP_UNMATCHABLE_EPOCHS]),
        unmatchable_subintervals=int(stats[K.SP_UNMATCHABLE_SUBS]),
        b_event=b_event, meetings=int(stats[K.SP_MEETINGS]),
        violations=int(stats[K.SP_VIOLATIONS]),
        met_separation_violations=sep,
        n_epochs=len(epochs), interval=(a, b), h_interval=(h_lo, h_hi),
        n_sites=n_sites, origin=origin, bbar_log=log,
    )


# ---------------------------------------------------------------------------
# simultaneous four-process coupling
# ---------------------------------------------------------------------------

@dataclass
class SimultaneousRun:
    eta: np.ndarray
    eta_prime: np.ndarray
    eta_bar: np.ndarray
    eta_bar_prime: np.ndarray
    joint_ok: bool
    failure_sites: list
    meetings: int
    violations: int
    unmatchable_tier1: int
    unmatchable_tier2: int
    pair_order_violations: int
    interval: tuple
    n_sites: int
    origin: int


def _build_system(counts_base, counts_total):
    """Piles with base particles layered below the extras."""
    n_sites = len(counts_base)
    n_base = int(counts_base.sum())
    n_tot = int(counts_total.sum())
    pile = np.full((n_sites, K.PILE_CAP), -1, np.int64)
    hpos = np.zeros(n_tot, np.int64)
    site = np.zeros(n_tot, np.int64)
    bid = 0
    eid = n_base
    for x in range(n_sites):
        kb = int(counts_base[x])
        kt = int(counts_total[x])
        if kt > K.PILE_CAP:
            raise TableOverflow(f"initial occupancy {kt} exceeds pile capacity")
        for i in range(kb):
            pile[x, i] = bid
            hpos[bid] = i
            site[bid] = x
            bid += 1
        for i in range(kb, kt):
            pile[x, i] = eid
            hpos[eid] = i
            site[eid] = x
            eid += 1
    return pile, hpos, site, pile.copy(), site.copy(), n_base, n_tot


def run_simultaneous(rate, rho, rho_prime, epsilon, interval, t, seed, replica, *,
                     rho_floor=1e-9,
                     stream1=rng.STREAM_MARKS, stream2=rng.STREAM_MARKS_2,
                     ) -> SimultaneousRun:
    if not (0.0 < epsilon <= 1.0):
        raise RateFunctionError("epsilon must lie in (0, 1]")
    if rho > rho_prime:
        raise RateFunctionError("rho must be <= rho_prime")
    if rho - epsilon < rho_floor:
        raise RateFunctionError("rho - epsilon below the configured density floor")
    if t < 1.0:
        raise RateFunctionError("horizon t must be >= 1")
    h_lo, h_hi, sub_len, n_sub, n_sites = coupling_geometry(rate, interval, t)
    origin = n_sites // 2

    base_a0, tot_a0, nxt = maximal_pair_counts(rate, rho, rho_prime, n_sites,
                                               seed, replica)
    base_b0, tot_b0, _ = maximal_pair_counts(rate, rho - epsilon, rho_prime + epsilon,
                                             n_sites, seed, replica, start_idx=nxt)

    pile_a, hpos_a, site_a, sl_pile_a, slot_site_a, nbase_a, ntot_a = \
        _build_system(base_a0, tot_a0)
    pile_b, hpos_b, site_b, sl_pile_b, slot_site_b, nbase_b, ntot_b = \
        _build_system(base_b0, tot_b0)
    cnt_a = tot_a0.copy()
    base_a = base_a0.copy()
    cnt_b = tot_b0.copy()
    base_b = base_b0.copy()
    met_a = np.zeros(ntot_a, np.uint8)
    met_b = np.zeros(ntot_b, np.uint8)
    partner_a = np.full(ntot_a, -1, np.int64)
    partner_b = np.full(ntot_b, -1, np.int64)
    met_bb = np.zeros(n_sites, np.int64)

    k_epochs = int(t ** 0.25)
    epochs = np.arange(k_epochs + 1, dtype=np.float64) * t ** 0.75
    epochs = epochs[epochs <= t + 1e-12]
    n_phase1 = math.ceil((k_epochs + 1) / 2)

    thr, thr_tail, _, _ = thinning_tables(rate)
    rate1 = rate.gamma_plus * ntot_a
    rate2 = rate.gamma_plus * ntot_b
    fstate = np.array([-1.0, -1.0])
    stats = np.zeros(K.SM_LEN, np.int64)
    tmp_a = np.zeros(ntot_a + 1, np.int64)
    tmp_b = np.zeros(ntot_b + 1, np.int64)

    status = K.simultaneous_kernel(
        cnt_a, base_a, pile_a, hpos_a, site_a, sl_pile_a, slot_site_a,
        met_a, partner_a, nbase_a,
        cnt_b, base_b, pile_b, hpos_b, site_b, sl_pile_b, slot_site_b,
        met_b, partner_b, nbase_b,
        met_bb,
        h_lo + origin, n_sub, sub_len,
        thr, thr_tail, rate1, rate2, float(t),
        epochs, n_phase1,
        fstate, stats,
        np.uint64(seed), np.uint64(replica), np.uint64(stream1), np.uint64(stream2),
        tmp_a, tmp_b,
    )
    if status == K.PILE_OVERFLOW:
        raise TableOverflow("pile capacity exceeded in simultaneous coupling")

    a, b = int(interval[0]), int(interval[1])
    i_sites = (origin + np.arange(a, b + 1)) % n_sites
    fail = (base_a[i_sites] < base_b[i_sites]) | (cnt_a[i_sites] > cnt_b[i_sites])
    bad = [int(c) for c in np.arange(a, b + 1)[fail]]
    order_viol = int(np.sum(base_a > cnt_a) + np.sum(base_b > cnt_b))
    return SimultaneousRun(
        eta=base_a, eta_prime=cnt_a, eta_bar=base_b, eta_bar_prime=cnt_b,
        joint_ok=len(bad) == 0, failure_sites=bad,
        meetings=int(stats[K.SM_MEETINGS]), violations=int(stats[K.SM_VIOLATIONS]),
        unmatchable_tier1=int(stats[K.SM_UNMATCHABLE_T1]),
        unmatchable_tier2=int(stats[K.SM_UNMATCHABLE_T2]),
        pair_order_violations=order_viol,
        interval=(a, b), n_sites=n_sites, origin=origin,
    )
