"""Statistical experiment drivers.

Each driver fans replicas out through the deterministic worker pool; every
replica derives all randomness from (master seed, replica index), so
reports are replayable and independent of the worker count.  Replica-index
offsets keep the independent sample sets of one experiment disjoint.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .. import engine, rng
from ..coupling import simultaneous_coupling_run, sprinkled_coupling_run
from ..errors import RateFunctionError, SupportViolation
from ..kernels import PATH_ALWAYS_LEFT, PATH_ALWAYS_RIGHT, PATH_GREEDY
from ..rates import RateFunction, chernoff_bounds, fugacity_of_density, marginal_pmf
from ..sim import Domain, torus
from ..workers import map_replicas
from . import functionals as flib
from .report import (
    ExperimentReport,
    bootstrap_ci,
    mean_ci,
    non_increasing_trend,
    wilson_ci,
)
from .schedule import BoxGeometry, RenormSchedule, SpaceTimeBox, dist_h, dist_v


# ---------------------------------------------------------------------------
# front velocity
# ---------------------------------------------------------------------------

def _velocity_replica(rep, rate, rho, horizons, seed, n_sites):
    counts, flags, origin = engine.standard_infection_start(
        rate, rho, n_sites, seed, rep, t_end=horizons[-1])
    run = engine.run_infection(rate, counts, flags, horizons[-1], seed, rep,
                               origin=origin, horizons=horizons)
    return run.front_at.copy(), run.escaped


def estimate_front_velocity(rate: RateFunction, rho: float, t_grid, replicas: int,
                            seed: int, workers: int = 1, *,
                            n_sites: int | None = None):
    """Empirical law of r_t / t per horizon, with escape accounting.

    Starts are conditioned on a particle at the origin (front at 0).
    Returns one report per horizon; extras carry the CLT half-width ratio
    between the first 10^3 replicas and the full set.
    """
    horizons = tuple(sorted(float(t) for t in t_grid))
    if min(horizons) <= 0:
        raise ValueError("t_grid must be positive")
    n_sites = n_sites or engine.domain_size(rate, horizons[-1])
    t0 = time.time()
    rows = map_replicas(_velocity_replica, replicas, workers,
                        rate, rho, horizons, seed, n_sites)
    fronts = np.array([r for r, _ in rows], dtype=np.float64)
    escaped = np.array([e for _, e in rows], dtype=bool)
    used = ~escaped
    reports = []
    for j, t in enumerate(horizons):
        ratios = fronts[used, j] / t
        est, lo, hi = mean_ci(ratios)
        extras = {
            "escaped": int(escaped.sum()),
            "used": int(used.sum()),
            "std": float(ratios.std(ddof=1)) if len(ratios) > 1 else 0.0,
            "positive": bool(lo > 0.0),
            "finite": bool(hi < math.inf),
        }
        n_head = min(1000, len(ratios))
        if n_head >= 2 and len(ratios) > n_head:
            _, lo_h, hi_h = mean_ci(ratios[:n_head])
            full_half = (hi - lo) / 2.0
            head_half = (hi_h - lo_h) / 2.0
            extras["halfwidth_ratio_1k"] = float(full_half / head_half) if head_half else 0.0
        reports.append(ExperimentReport(
            name="front-velocity", estimate=est, ci_low=lo, ci_high=hi,
            replicas=replicas, seed=seed,
            parameters={"rho": rho, "t": t, "n_sites": n_sites},
            extras=extras, wall_time=time.time() - t0,
        ))
    return reports


# ---------------------------------------------------------------------------
# martingale concentration
# ---------------------------------------------------------------------------

def _martingale_replica(rep, rate, rho, horizons, seed, n_sites):
    counts, flags, origin = engine.standard_infection_start(
        rate, rho, n_sites, seed, rep, t_end=horizons[-1])
    run = engine.run_infection(rate, counts, flags, horizons[-1], seed, rep,
                               origin=origin, horizons=horizons)
    return run.martingale_at.copy(), run.escaped


def martingale_concentration_test(rate: RateFunction, rho: float, L_grid, delta: float,
                                  replicas: int, seed: int, workers: int = 1, *,
                                  n_sites: int | None = None,
                                  alpha: float = 0.05) -> ExperimentReport:
    """Frequency of {|M_L| >= delta L} per horizon with a decay-trend test,
    plus the zero-mean check of M_L at every horizon."""
    horizons = tuple(sorted(float(t) for t in L_grid))
    n_sites = n_sites or engine.domain_size(rate, horizons[-1])
    t0 = time.time()
    rows = map_replicas(_martingale_replica, replicas, workers,
                        rate, rho, horizons, seed, n_sites)
    m_vals = np.array([m for m, _ in rows])
    escaped = np.array([e for _, e in rows], dtype=bool)
    used = ~escaped
    freqs = []
    per_l = {}
    hits = []
    trials = []
    for j, L in enumerate(horizons):
        ms = m_vals[used, j]
        n_hit = int((np.abs(ms) >= delta * L).sum())
        p, lo, hi = wilson_ci(n_hit, len(ms))
        mean, mlo, mhi = mean_ci(ms)
        se = (mhi - mean) / 1.959963984540054 if len(ms) > 1 else 0.0
        per_l[str(L)] = {
            "freq": p, "freq_ci": [lo, hi],
            "mean": mean, "mean_se": se,
            "zero_mean_ok": bool(abs(mean) <= 3.0 * se + 1e-12),
        }
        freqs.append(p)
        hits.append(n_hit)
        trials.append(len(ms))
    ok, pvals = non_increasing_trend(hits, trials, alpha)
    return ExperimentReport(
        name="martingale-concentration",
        estimate=freqs[-1],
        ci_low=per_l[str(horizons[-1])]["freq_ci"][0],
        ci_high=per_l[str(horizons[-1])]["freq_ci"][1],
        replicas=replicas, seed=seed,
        parameters={"rho": rho, "L_grid": list(horizons), "delta": delta,
                    "n_sites": n_sites},
        extras={"per_L": per_l, "non_increasing": ok, "trend_pvalues": pvals,
                "escaped": int(escaped.sum())},
        wall_time=time.time() - t0,
    )


def _increment_replica(rep, rate, rho, t_max, seed, n_sites):
    horizons = tuple(float(t) for t in range(0, int(t_max) + 1))
    counts, flags, origin = engine.standard_infection_start(
        rate, rho, n_sites, seed, rep, t_end=horizons[-1])
    run = engine.run_infection(rate, counts, flags, horizons[-1], seed, rep,
                               origin=origin, horizons=horizons)
    return np.diff(run.martingale_at), run.escaped


def martingale_increment_tails(rate: RateFunction, rho: float, t_max: int,
                               replicas: int, seed: int, workers: int = 1, *,
                               u_grid=(1, 2, 4, 8, 16), n_sites: int | None = None
                               ) -> ExperimentReport:
    """Tail frequencies of unit-time martingale increments on a level grid,
    with the fitted slope of log-frequency against sqrt(u)."""
    n_sites = n_sites or engine.domain_size(rate, float(t_max))
    t0 = time.time()
    rows = map_replicas(_increment_replica, replicas, workers,
                        rate, rho, t_max, seed, n_sites)
    incs = np.abs(np.concatenate([d for d, e in rows if not e]))
    u_grid = np.asarray(list(u_grid), dtype=np.float64)
    freqs = np.array([(incs >= u).mean() for u in u_grid])
    pos = freqs > 0
    slope = None
    if pos.sum() >= 2:
        slope = float(np.polyfit(np.sqrt(u_grid[pos]), np.log(freqs[pos]), 1)[0])
    return ExperimentReport(
        name="martingale-increment-tails",
        estimate=float(freqs[-1]), ci_low=0.0, ci_high=1.0,
        replicas=replicas, seed=seed,
        parameters={"rho": rho, "t_max": t_max, "u_grid": u_grid.tolist()},
        extras={"frequencies": freqs.tolist(), "sqrt_slope": slope,
                "n_increments": int(len(incs))},
        wall_time=time.time() - t0,
    )


# ---------------------------------------------------------------------------
# decoupling tests
# ---------------------------------------------------------------------------

def _decoupling_domain(rate, specs, t_end):
    span = max(max(abs(s.box.x0), abs(s.box.x1)) for s in specs)
    n = max(engine.domain_size(rate, t_end), 2 * span + 2 * engine.DOMAIN_WINDOW)
    return torus(n + n % 2)


def _functional_replica(rep, rate, rho, specs, seed, n_sites, t_end):
    domain = torus(n_sites)
    boxes, box_of, snaps, snap_of = flib.kernel_inputs(specs, domain)
    counts, _ = engine.draw_product_config(rate, rho, n_sites, seed, rep)
    run = engine.run_counts(rate, counts, t_end, seed, rep,
                            snapshot_times=snaps, boxes=boxes or None)
    return tuple(
        flib.evaluate(spec, i, run, domain, box_of, snap_of)
        for i, spec in enumerate(specs)
    )


def vertical_decoupling_test(rate: RateFunction, rho: float, epsilon: float,
                             f1: flib.FunctionalSpec, f2: flib.FunctionalSpec,
                             replicas: int, seed: int, workers: int = 1, *,
                             n_boot: int = 400) -> ExperimentReport:
    """Estimate E_rho[f1 f2] - E_{rho+eps}[f1] E_{rho+eps}[f2].

    The joint term uses replicas 0..R-1 at density rho; each sprinkled
    marginal uses its own replica range at rho+eps, so the three samples
    are independent.  Both monotone directions are supported: for a pair of
    non-increasing functionals pass a negative epsilon.
    """
    if f1.monotone_sign != f2.monotone_sign:
        raise SupportViolation("functionals must share a monotone direction")
    if f1.monotone_sign > 0 and not 0.0 < epsilon <= 1.0:
        raise RateFunctionError("non-decreasing pair needs epsilon in (0, 1]")
    if f1.monotone_sign < 0 and not -1.0 <= epsilon < 0.0:
        raise RateFunctionError("non-increasing pair needs epsilon in [-1, 0)")
    dv = dist_v(f1.box, f2.box)
    t_end = max(f1.box.t1, f2.box.t1)
    specs = (f1, f2)
    domain = _decoupling_domain(rate, specs, t_end)
    t0 = time.time()
    joint = np.array(map_replicas(_functional_replica, replicas, workers,
                                  rate, rho, specs, seed, domain.size, t_end))
    rho_s = rho + epsilon
    m1 = np.array(map_replicas(_functional_replica, replicas, workers,
                               rate, rho_s, (f1,), seed + 1, domain.size, t_end))
    m2 = np.array(map_replicas(_functional_replica, replicas, workers,
                               rate, rho_s, (f2,), seed + 2, domain.size, t_end))
    prod = joint[:, 0] * joint[:, 1]
    a1 = m1[:, 0].astype(np.float64)
    a2 = m2[:, 0].astype(np.float64)
    est = float(prod.mean() - a1.mean() * a2.mean())

    gen = rng.stream(seed, 0, rng.STREAM_BOOTSTRAP)
    n = replicas
    boots = np.empty(n_boot)
    for b in range(n_boot):
        i0 = gen.integers(0, n, size=n)
        i1 = gen.integers(0, n, size=n)
        i2 = gen.integers(0, n, size=n)
        boots[b] = prod[i0].mean() - a1[i1].mean() * a2[i2].mean()
    lo, hi = np.quantile(boots, [0.025, 0.975])
    return ExperimentReport(
        name="vertical-decoupling",
        estimate=est, ci_low=float(min(lo, est)), ci_high=float(max(hi, est)),
        replicas=replicas, seed=seed,
        parameters={"rho": rho, "epsilon": epsilon, "dist_v": dv,
                    "f1": f1.kind, "f2": f2.kind, "n_sites": domain.size},
        extras={
            "lhs": float(prod.mean()),
            "rhs": float(a1.mean() * a2.mean()),
            "mean_f1_sprinkled": float(a1.mean()),
            "mean_f2_sprinkled": float(a2.mean()),
            "gap_upper_ci": float(max(hi, est)),
        },
        wall_time=time.time() - t0,
    )


def make_vertical_boxes(kind, side, dist_v, threshold):
    """A pair of identical-shape functionals separated by dist_v in time."""
    if kind == "slice_sum":
        b1 = SpaceTimeBox(-side, -1, 0.0, 0.0)
        b2 = SpaceTimeBox(-side, -1, float(dist_v), float(dist_v))
        f1 = flib.FunctionalSpec(kind, b1, threshold, slice_time=0.0)
        f2 = flib.FunctionalSpec(kind, b2, threshold, slice_time=float(dist_v))
    else:
        b1 = SpaceTimeBox(-side, -1, 0.0, float(side))
        b2 = SpaceTimeBox(-side, -1, float(side + dist_v), float(2 * side + dist_v))
        f1 = flib.FunctionalSpec(kind, b1, threshold)
        f2 = flib.FunctionalSpec(kind, b2, threshold)
    return f1, f2


def make_horizontal_boxes(kind, side, dist_h, threshold, t_obs):
    b1 = SpaceTimeBox(-side, -1, 0.0, float(t_obs))
    b2 = SpaceTimeBox(int(dist_h), int(dist_h) + side - 1, 0.0, float(t_obs))
    if kind == "slice_sum":
        f1 = flib.FunctionalSpec(kind, b1, threshold, slice_time=float(t_obs))
        f2 = flib.FunctionalSpec(kind, b2, threshold, slice_time=float(t_obs))
    else:
        f1 = flib.FunctionalSpec(kind, b1, threshold)
        f2 = flib.FunctionalSpec(kind, b2, threshold)
    return f1, f2


def vertical_decoupling_grid(rate: RateFunction, rho: float, epsilon: float,
                             kind: str, side: int, threshold: float,
                             dist_grid, replicas: int, seed: int,
                             workers: int = 1, *, n_boot: int = 400):
    """Sprinkled gap across a dist_V grid with common randomness.

    All separations are evaluated on the same joint trajectories (the later
    functional read at each separation of one run), and the sprinkled
    product is estimated once: the marginal means do not depend on the time
    shift, by stationarity.  The decay of the gap across the grid is then
    resolved by the correlation decay itself rather than replica noise.
    """
    dist_grid = [float(d) for d in dist_grid]
    f1, _ = make_vertical_boxes(kind, side, dist_grid[0], threshold)
    f2s = [make_vertical_boxes(kind, side, d, threshold)[1] for d in dist_grid]
    specs = (f1, *f2s)
    t_end = max(s.box.t1 for s in specs)
    domain = _decoupling_domain(rate, specs, t_end)
    t0 = time.time()
    joint = np.array(map_replicas(_functional_replica, replicas, workers,
                                  rate, rho, specs, seed, domain.size, t_end))
    rho_s = rho + epsilon
    m1 = np.array(map_replicas(_functional_replica, replicas, workers,
                               rate, rho_s, (f1,), seed + 1, domain.size,
                               f1.box.t1 or 1.0))
    m2 = np.array(map_replicas(_functional_replica, replicas, workers,
                               rate, rho_s, (f2s[0],), seed + 2, domain.size,
                               f2s[0].box.t1))
    a1 = m1[:, 0].astype(np.float64)
    a2 = m2[:, 0].astype(np.float64)
    rhs = float(a1.mean() * a2.mean())
    gen = rng.stream(seed, 0, rng.STREAM_BOOTSTRAP)
    n = replicas
    reports = []
    for j, dv in enumerate(dist_grid):
        prod = (joint[:, 0] * joint[:, 1 + j]).astype(np.float64)
        est = float(prod.mean()) - rhs
        boots = np.empty(n_boot)
        for b in range(n_boot):
            i0 = gen.integers(0, n, size=n)
            i1 = gen.integers(0, n, size=n)
            i2 = gen.integers(0, n, size=n)
            boots[b] = prod[i0].mean() - a1[i1].mean() * a2[i2].mean()
        lo, hi = np.quantile(boots, [0.025, 0.975])
        reports.append(ExperimentReport(
            name="vertical-decoupling",
            estimate=est, ci_low=float(min(lo, est)), ci_high=float(max(hi, est)),
            replicas=replicas, seed=seed,
            parameters={"rho": rho, "epsilon": epsilon, "dist_v": dv,
                        "f1": kind, "f2": kind, "side": side,
                        "threshold": threshold, "n_sites": domain.size},
            extras={"lhs": float(prod.mean()), "rhs": rhs,
                    "mean_f1_sprinkled": float(a1.mean()),
                    "mean_f2_sprinkled": float(a2.mean()),
                    "gap_upper_ci": float(max(hi, est))},
            wall_time=time.time() - t0,
        ))
    return reports


def horizontal_decoupling_test(rate: RateFunction, rho: float,
                               f1: flib.FunctionalSpec, f2: flib.FunctionalSpec,
                               replicas: int, seed: int, workers: int = 1, *,
                               n_boot: int = 400, c1: float = 1.0,
                               c2: float = 0.0) -> ExperimentReport:
    """Empirical covariance of two box functionals at one density.

    The separation hypothesis dist_H >= c1 (s + dist_V) + c2 is reported,
    not enforced: runs below the cutoff demonstrate why separation is
    needed."""
    dh = dist_h(f1.box, f2.box)
    dv = dist_v(f1.box, f2.box)
    side = max(f1.box.side, f2.box.side)
    hypothesis_met = dh >= c1 * (side + dv) + c2
    t_end = max(f1.box.t1, f2.box.t1)
    specs = (f1, f2)
    domain = _decoupling_domain(rate, specs, t_end)
    t0 = time.time()
    joint = np.array(map_replicas(_functional_replica, replicas, workers,
                                  rate, rho, specs, seed, domain.size, t_end))
    a = joint[:, 0].astype(np.float64)
    b = joint[:, 1].astype(np.float64)

    def cov(u, v):
        return float((u * v).mean() - u.mean() * v.mean())

    est, lo, hi = bootstrap_ci((a, b), cov, n_boot, seed)
    abs_upper = max(abs(lo), abs(hi))
    return ExperimentReport(
        name="horizontal-decoupling",
        estimate=est, ci_low=lo, ci_high=hi,
        replicas=replicas, seed=seed,
        parameters={"rho": rho, "dist_h": dh, "dist_v": dv, "side": side,
                    "f1": f1.kind, "f2": f2.kind, "n_sites": domain.size},
        extras={"hypothesis_met": bool(hypothesis_met),
                "abs_cov_upper_ci": float(abs_upper),
                "mean_f1": float(a.mean()), "mean_f2": float(b.mean())},
        wall_time=time.time() - t0,
    )


def horizontal_decoupling_grid(rate: RateFunction, rho: float, kind: str,
                               side: int, threshold: float, t_obs: float,
                               dist_grid, replicas: int, seed: int,
                               workers: int = 1, *, n_boot: int = 400,
                               alpha: float = 0.05):
    """Covariance across a dist_H grid on common replicas.

    Every separation reads the same joint trajectories, and successive
    |covariance| values are compared with a one-sided bootstrap test: the
    trend claim is rejected only when a later separation shows a
    significantly larger dependence.
    """
    dist_grid = [int(d) for d in dist_grid]
    f1 = make_horizontal_boxes(kind, side, dist_grid[0], threshold, t_obs)[0]
    f2s = [make_horizontal_boxes(kind, side, d, threshold, t_obs)[1]
           for d in dist_grid]
    specs = (f1, *f2s)
    domain = _decoupling_domain(rate, specs, t_obs)
    t0 = time.time()
    rows = np.array(map_replicas(_functional_replica, replicas, workers,
                                 rate, rho, specs, seed, domain.size, t_obs))
    a = rows[:, 0].astype(np.float64)
    bs = [rows[:, 1 + j].astype(np.float64) for j in range(len(dist_grid))]

    def cov(u, v):
        return float((u * v).mean() - u.mean() * v.mean())

    gen = rng.stream(seed, 0, rng.STREAM_BOOTSTRAP)
    n = replicas
    boot_abs = np.empty((n_boot, len(dist_grid)))
    for b in range(n_boot):
        idx = gen.integers(0, n, size=n)
        ar = a[idx]
        for j in range(len(dist_grid)):
            boot_abs[b, j] = abs(cov(ar, bs[j][idx]))
    reports = []
    increase_pvals = []
    for j, d in enumerate(dist_grid):
        est = cov(a, bs[j])
        lo, hi = np.quantile(boot_abs[:, j], [0.025, 0.975])
        reports.append(ExperimentReport(
            name="horizontal-decoupling",
            estimate=est, ci_low=float(min(-hi, est)), ci_high=float(max(hi, est)),
            replicas=replicas, seed=seed,
            parameters={"rho": rho, "dist_h": d, "side": side, "t_obs": t_obs,
                        "f_kind": kind, "threshold": threshold,
                        "n_sites": domain.size},
            extras={"abs_cov_upper_ci": float(hi),
                    "mean_f1": float(a.mean()), "mean_f2": float(bs[j].mean())},
            wall_time=time.time() - t0,
        ))
        if j > 0:
            diffs = boot_abs[:, j] - boot_abs[:, j - 1]
            increase_pvals.append(float((diffs <= 0).mean()))
    # one-sided check: a later separation must not be significantly more
    # dependent than an earlier one
    non_increasing = all(p > alpha for p in increase_pvals)
    for rep in reports:
        rep.extras["non_increasing"] = non_increasing
        rep.extras["increase_pvalues"] = increase_pvals
    return reports


# ---------------------------------------------------------------------------
# renormalization events
# ---------------------------------------------------------------------------

def _ek_replica(rep, rate, rho, horizon, exit_half, seed, n_sites):
    counts, flags, origin = engine.standard_infection_start(
        rate, rho, n_sites, seed, rep, t_end=horizon)
    run = engine.run_infection(rate, counts, flags, horizon, seed, rep,
                               origin=origin, horizons=(horizon,),
                               exit_half=exit_half)
    return (run.front_at[0], run.exit_side, run.sup, run.inf, run.escaped)


def estimate_event_ek(rate: RateFunction, schedule: RenormSchedule, k: int,
                      replicas: int, seed: int, workers: int = 1, *,
                      v_grid=None, rho: float | None = None,
                      n_sites: int | None = None) -> ExperimentReport:
    """Fast-exit event frequency at level k: the translated front first
    leaves the level box through its right side or ends beyond v_k L_k.

    The level densities/velocities come from the schedule; a v grid is
    evaluated on common replicas, so monotonicity in v is exact.  Also
    reports the confinement event (front stays in the box throughout)."""
    lvl = schedule.level(k)
    geom = BoxGeometry(schedule, k)
    horizon = float(lvl["L"])
    rho = lvl["rho"] if rho is None else rho
    if v_grid is None:
        v_grid = [lvl["v"]]
    n_sites = n_sites or engine.domain_size(rate, horizon)
    t0 = time.time()
    rows = map_replicas(_ek_replica, replicas, workers,
                        rate, rho, horizon, geom.half_width, seed, n_sites)
    front = np.array([r[0] for r in rows], dtype=np.float64)
    exit_side = np.array([r[1] for r in rows], dtype=np.int64)
    sup = np.array([r[2] for r in rows], dtype=np.float64)
    inf = np.array([r[3] for r in rows], dtype=np.float64)
    escaped = np.array([r[4] for r in rows], dtype=bool)
    used = ~escaped
    n_used = int(used.sum())
    w = geom.half_width
    confined = (sup <= w) & (inf >= -w) & used
    p_conf, conf_lo, conf_hi = wilson_ci(int(confined.sum()), n_used)
    per_v = {}
    for v in v_grid:
        hit = ((exit_side == 1) | ((exit_side == 0) & (front >= v * horizon))) & used
        p, lo, hi = wilson_ci(int(hit.sum()), n_used)
        per_v[f"{float(v):g}"] = {"p": p, "ci": [lo, hi]}
    v0 = f"{float(v_grid[0]):g}"
    return ExperimentReport(
        name="event-ek",
        estimate=per_v[v0]["p"], ci_low=per_v[v0]["ci"][0], ci_high=per_v[v0]["ci"][1],
        replicas=replicas, seed=seed,
        parameters={"k": k, "L": lvl["L"], "rho": rho, "v": float(v_grid[0]),
                    "half_width": w, "n_sites": n_sites},
        extras={"per_v": per_v, "confinement_freq": p_conf,
                "confinement_ci": [conf_lo, conf_hi],
                "escaped": int(escaped.sum())},
        wall_time=time.time() - t0,
    )


def _fk_replica(rep, rate, rho, rho_p, horizon, clamp, watch, radius, seed, n_sites):
    lo, hi, _ = engine.maximal_pair_counts(rate, rho, rho_p, n_sites, seed, rep)
    paths = [
        (PATH_ALWAYS_LEFT, 0, clamp, None),
        (PATH_ALWAYS_RIGHT, 0, clamp, None),
        (PATH_GREEDY, 0, clamp, None),
        (PATH_ALWAYS_LEFT, 0, watch + clamp, watch),
        (PATH_ALWAYS_RIGHT, 0, watch + clamp, watch),
    ]
    run = engine.run_pair(rate, lo, hi, horizon, seed, rep, paths=paths,
                          radius=radius)
    return run.path_vfrac[:3].copy(), run.path_exceed_t[3:].copy(), run.violations


def estimate_event_fk(rate: RateFunction, schedule: RenormSchedule, k: int,
                      radius: int, replicas: int, seed: int, workers: int = 1, *,
                      n_sites: int | None = None) -> ExperimentReport:
    """Family-restricted estimate of the sparse-occupation path event.

    Searches only the extremal family (always-left, always-right, greedy
    window-minimizing) over paths allowed by the upper process of a
    basic-coupled pair, so the estimate is an explicit lower bound on the
    existential event's probability.  Also reports the confinement event of
    the next level's extremal paths."""
    lvl = schedule.level(k)
    geom = BoxGeometry(schedule, k)
    horizon = float(lvl["L"])
    clamp = geom.confinement_half_width()
    watch = clamp
    n_sites = n_sites or max(engine.domain_size(rate, horizon),
                             2 * clamp + 4 * engine.DOMAIN_WINDOW)
    n_sites += n_sites % 2
    t0 = time.time()
    rows = map_replicas(_fk_replica, replicas, workers,
                        rate, lvl["rho"], lvl["rho_prime"], horizon,
                        clamp, watch, radius, seed, n_sites)
    vfracs = np.array([r[0] for r in rows])
    exceeds = np.array([r[1] for r in rows])
    if any(r[2] for r in rows):
        raise RuntimeError("pair domination violated")
    eps_k = lvl["eps"]
    hit = (vfracs.min(axis=1) <= eps_k)
    p, lo, hi = wilson_ci(int(hit.sum()), replicas)
    g_ok = (exceeds < 0.0).all(axis=1)
    g_p, g_lo, g_hi = wilson_ci(int(g_ok.sum()), replicas)
    return ExperimentReport(
        name="event-fk",
        estimate=p, ci_low=lo, ci_high=hi,
        replicas=replicas, seed=seed,
        parameters={"k": k, "L": lvl["L"], "rho": lvl["rho"],
                    "rho_prime": lvl["rho_prime"], "eps": eps_k,
                    "radius": radius, "clamp": clamp, "n_sites": n_sites},
        extras={
            "estimate_kind": "family-restricted lower bound on the existential event",
            "mean_v_by_path": vfracs.mean(axis=0).tolist(),
            "confinement_freq": g_p, "confinement_ci": [g_lo, g_hi],
        },
        wall_time=time.time() - t0,
    )


# ---------------------------------------------------------------------------
# concentration of the invariant measure
# ---------------------------------------------------------------------------

def chernoff_check(rate: RateFunction, rho: float, epsilon: float, n: int,
                   replicas: int, seed: int) -> ExperimentReport:
    """Empirical deviation frequency of an n-site sum against the computed
    exponential-moment bound."""
    bound = chernoff_bounds(rate, rho, epsilon, n)
    cdf = np.cumsum(marginal_pmf(rate, fugacity_of_density(rate, rho)))
    t0 = time.time()
    hits_up = 0
    hits_low = 0
    chunk = max(1, min(replicas, 2_000_000 // max(n, 1)))
    rep = 0
    while rep < replicas:
        m = min(chunk, replicas - rep)
        u = rng.uniforms(seed, rep, rng.STREAM_AUX, m * n).reshape(m, n)
        sums = np.searchsorted(cdf, u, side="right").sum(axis=1)
        hits_up += int((sums >= (rho + epsilon) * n).sum())
        hits_low += int((sums <= (rho - epsilon) * n).sum())
        rep += m
    p_up, lo_up, hi_up = wilson_ci(hits_up, replicas)
    p_low, lo_low, hi_low = wilson_ci(hits_low, replicas)
    se_up = math.sqrt(max(p_up * (1 - p_up), 1.0 / replicas) / replicas)
    return ExperimentReport(
        name="chernoff-check",
        estimate=p_up, ci_low=lo_up, ci_high=hi_up,
        replicas=replicas, seed=seed,
        parameters={"rho": rho, "epsilon": epsilon, "n": n},
        extras={
            "bound_upper": bound.bound_upper,
            "bound_lower": bound.bound_lower,
            "c_ld": bound.c_ld,
            "freq_lower": p_low,
            "freq_lower_ci": [lo_low, hi_low],
            "upper_dominates": bool(p_up <= bound.bound_upper + 3 * se_up),
        },
        wall_time=time.time() - t0,
    )


# ---------------------------------------------------------------------------
# coupling failure curves
# ---------------------------------------------------------------------------

def _sprinkled_replica(rep, rate, rho, epsilon, interval, t, seed):
    run = sprinkled_coupling_run(rate, rho, epsilon, interval, t, seed, rep)
    return (not run.domination_ok, run.unmet_fraction, run.unmatchable_epochs,
            run.b_event)


def sprinkled_failure_curve(rate: RateFunction, rho: float, epsilon: float,
                            interval, t_grid, replicas: int, seed: int,
                            workers: int = 1, *, alpha: float = 0.05
                            ) -> ExperimentReport:
    """Domination-failure frequency across horizons, with the decay trend."""
    t0 = time.time()
    per_t = {}
    hits = []
    trials = []
    for t in t_grid:
        rows = map_replicas(_sprinkled_replica, replicas, workers,
                            rate, rho, epsilon, tuple(interval), float(t), seed)
        fails = sum(1 for r in rows if r[0])
        p, lo, hi = wilson_ci(fails, replicas)
        per_t[f"{float(t):g}"] = {
            "failure": p, "ci": [lo, hi],
            "mean_unmet_fraction": float(np.mean([r[1] for r in rows])),
            "unmatchable_epoch_rate": float(np.mean([r[2] > 0 for r in rows])),
            "b_event_rate": float(np.mean([r[3] for r in rows])),
        }
        hits.append(fails)
        trials.append(replicas)
    ok, pvals = non_increasing_trend(hits, trials, alpha)
    last = f"{float(t_grid[-1]):g}"
    return ExperimentReport(
        name="sprinkled-coupling",
        estimate=per_t[last]["failure"],
        ci_low=per_t[last]["ci"][0], ci_high=per_t[last]["ci"][1],
        replicas=replicas, seed=seed,
        parameters={"rho": rho, "epsilon": epsilon, "interval": list(interval),
                    "t_grid": [float(t) for t in t_grid]},
        extras={"per_t": per_t, "non_increasing": ok, "trend_pvalues": pvals},
        wall_time=time.time() - t0,
    )


def _simultaneous_replica(rep, rate, rho, rho_p, epsilon, interval, t, seed):
    run = simultaneous_coupling_run(rate, rho, rho_p, epsilon, interval, t,
                                    seed, rep)
    return (not run.joint_ok, run.meetings)


def simultaneous_failure_curve(rate: RateFunction, rho: float, rho_prime: float,
                               epsilon: float, interval, t_grid, replicas: int,
                               seed: int, workers: int = 1, *,
                               alpha: float = 0.05) -> ExperimentReport:
    """Joint-domination failure frequency of the four-process coupling."""
    t0 = time.time()
    per_t = {}
    hits = []
    trials = []
    for t in t_grid:
        rows = map_replicas(_simultaneous_replica, replicas, workers,
                            rate, rho, rho_prime, epsilon, tuple(interval),
                            float(t), seed)
        fails = sum(1 for r in rows if r[0])
        p, lo, hi = wilson_ci(fails, replicas)
        per_t[f"{float(t):g}"] = {"failure": p, "ci": [lo, hi]}
        hits.append(fails)
        trials.append(replicas)
    ok, pvals = non_increasing_trend(hits, trials, alpha)
    last = f"{float(t_grid[-1]):g}"
    return ExperimentReport(
        name="simultaneous-coupling",
        estimate=per_t[last]["failure"],
        ci_low=per_t[last]["ci"][0], ci_high=per_t[last]["ci"][1],
        replicas=replicas, seed=seed,
        parameters={"rho": rho, "rho_prime": rho_prime, "epsilon": epsilon,
                    "interval": list(interval),
                    "t_grid": [float(t) for t in t_grid]},
        extras={"per_t": per_t, "non_increasing": ok, "trend_pvalues": pvals},
        wall_time=time.time() - t0,
    )
