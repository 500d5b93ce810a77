"""Experiment registry for the command line: schemas, runners, CSV rows.

Each runner fills a Collector with header/rows (the plot-ready data) and a
summary payload; rows appended per grid point are flushed even when a run
is interrupted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import engine
from .config import Param, register
from .coupling import sprinkled_coupling_run
from .errors import ConfigInvalid
from .experiments import (
    FunctionalSpec,
    RenormSchedule,
    SpaceTimeBox,
    make_horizontal_boxes,
    make_vertical_boxes,
    vertical_decoupling_grid,
    chernoff_check,
    estimate_event_ek,
    estimate_event_fk,
    estimate_front_velocity,
    horizontal_decoupling_test,
    martingale_concentration_test,
    martingale_increment_tails,
    non_increasing_trend,
    simultaneous_failure_curve,
    sprinkled_failure_curve,
    vertical_decoupling_test,
    wilson_ci,
)
from .infection import displacement_tail_report
from .oracle import (
    build_generator,
    canonical_weights,
    check_canonical_stationarity,
    total_variation,
    transient_distribution,
)
from .sim import (
    Domain,
    SiteConfig,
    evolve,
    occupancy_excursion_check,
    sample_stationary_config,
    snapshots_to_csv,
    torus,
)
from .workers import map_replicas


@dataclass
class Collector:
    header: list = None
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)   # extra files: name -> writer


def _reports_payload(reports):
    if isinstance(reports, list):
        return [r.to_dict() for r in reports]
    return reports.to_dict()


# ---------------------------------------------------------------------------
# front velocity
# ---------------------------------------------------------------------------

def _run_front_velocity(cfg, col):
    reports = estimate_front_velocity(
        cfg.rate(), cfg.params["rho"], cfg.params["t_grid"], cfg.replicas,
        cfg.seed, cfg.workers,
    )
    col.header = ["t", "mean_velocity", "ci_low", "ci_high", "used", "escaped"]
    for r in reports:
        col.rows.append([r.parameters["t"], r.estimate, r.ci_low, r.ci_high,
                         r.extras["used"], r.extras["escaped"]])
    col.summary["reports"] = _reports_payload(reports)


register(
    "front-velocity",
    [Param("rho", "float", help="particle density"),
     Param("t_grid", "list[float]", help="observation horizons")],
    _run_front_velocity,
    "empirical front velocity r_t/t with confidence intervals",
)


# ---------------------------------------------------------------------------
# martingale experiments
# ---------------------------------------------------------------------------

def _run_martingale(cfg, col):
    rep = martingale_concentration_test(
        cfg.rate(), cfg.params["rho"], cfg.params["L_grid"],
        cfg.params["delta"], cfg.replicas, cfg.seed, cfg.workers,
    )
    col.header = ["L", "freq", "ci_low", "ci_high", "mean", "mean_se"]
    for key, v in rep.extras["per_L"].items():
        col.rows.append([float(key), v["freq"], v["freq_ci"][0], v["freq_ci"][1],
                         v["mean"], v["mean_se"]])
    col.summary["reports"] = _reports_payload(rep)


register(
    "martingale-concentration",
    [Param("rho", "float"),
     Param("L_grid", "list[float]", help="horizons L"),
     Param("delta", "float", help="deviation threshold per unit horizon")],
    _run_martingale,
    "frequency of |M_L| >= delta L across horizons, with decay trend",
)


def _run_martingale_increments(cfg, col):
    rep = martingale_increment_tails(
        cfg.rate(), cfg.params["rho"], cfg.params["t_max"],
        cfg.replicas, cfg.seed, cfg.workers, u_grid=cfg.params["u_grid"],
    )
    col.header = ["u", "tail_freq"]
    for u, f in zip(rep.parameters["u_grid"], rep.extras["frequencies"]):
        col.rows.append([u, f])
    col.summary["reports"] = _reports_payload(rep)


register(
    "martingale-increments",
    [Param("rho", "float"),
     Param("t_max", "int", default=32),
     Param("u_grid", "list[float]", default=[1, 2, 4, 8, 16])],
    _run_martingale_increments,
    "tail frequencies of unit-time martingale increments",
)


# ---------------------------------------------------------------------------
# decoupling
# ---------------------------------------------------------------------------

def _validate_vertical(cfg):
    kind = cfg.params["f_kind"]
    eps = cfg.params["epsilon"]
    sign = -1 if kind == "empty_box" else 1
    if sign > 0 and not 0.0 < eps <= 1.0:
        raise ConfigInvalid("non-decreasing functionals need epsilon in (0, 1]")
    if sign < 0 and not -1.0 <= eps < 0.0:
        raise ConfigInvalid("non-increasing functionals need epsilon in [-1, 0)")


def _run_vertical(cfg, col):
    col.header = ["dist_v", "gap", "ci_low", "ci_high", "lhs", "rhs"]
    reports = vertical_decoupling_grid(
        cfg.rate(), cfg.params["rho"], cfg.params["epsilon"],
        cfg.params["f_kind"], cfg.params["side"], cfg.params["threshold"],
        cfg.params["dist_v_grid"], cfg.replicas, cfg.seed, cfg.workers,
    )
    for rep in reports:
        col.rows.append([rep.parameters["dist_v"], rep.estimate, rep.ci_low,
                         rep.ci_high, rep.extras["lhs"], rep.extras["rhs"]])
    col.summary["reports"] = _reports_payload(reports)


register(
    "vertical-decoupling",
    [Param("rho", "float"),
     Param("epsilon", "float", help="sprinkling; negative for non-increasing pairs"),
     Param("side", "int", default=8, help="box side (sites)"),
     Param("dist_v_grid", "list[float]", help="time separations"),
     Param("f_kind", "str", default="slice_sum"),
     Param("threshold", "float", default=9)],
    _run_vertical,
    "sprinkled gap E_rho[f1 f2] - E_{rho+eps}[f1] E_{rho+eps}[f2] over dist_V",
    validate=_validate_vertical,
)


def _run_horizontal(cfg, col):
    col.header = ["dist_h", "cov", "ci_low", "ci_high", "abs_cov_upper_ci",
                  "hypothesis_met"]
    reports = []
    for dh in cfg.params["dist_h_grid"]:
        f1, f2 = make_horizontal_boxes(cfg.params["f_kind"], cfg.params["side"],
                                       int(dh), cfg.params["threshold"],
                                       cfg.params["t_obs"])
        rep = horizontal_decoupling_test(
            cfg.rate(), cfg.params["rho"], f1, f2, cfg.replicas, cfg.seed,
            cfg.workers,
        )
        reports.append(rep)
        col.rows.append([dh, rep.estimate, rep.ci_low, rep.ci_high,
                         rep.extras["abs_cov_upper_ci"],
                         int(rep.extras["hypothesis_met"])])
        col.summary["reports"] = _reports_payload(reports)


register(
    "horizontal-decoupling",
    [Param("rho", "float"),
     Param("side", "int", default=8),
     Param("dist_h_grid", "list[float]", help="space separations"),
     Param("f_kind", "str", default="slice_sum"),
     Param("threshold", "float", default=9),
     Param("t_obs", "float", default=8.0)],
    _run_horizontal,
    "covariance of box functionals at one density over dist_H",
)


# ---------------------------------------------------------------------------
# renormalization events
# ---------------------------------------------------------------------------

def _schedule_from(cfg):
    return RenormSchedule(
        L0=cfg.params["L0"], growth=cfg.params["growth"],
        k_max=max(cfg.params["k"] + 1, 1), v0=cfg.params["v0"],
        rho0=cfg.params["rho0"], eps0=cfg.params["eps0"],
    )


def _run_ek(cfg, col):
    sched = _schedule_from(cfg)
    v_grid = cfg.params["v_grid"] or None
    rep = estimate_event_ek(cfg.rate(), sched, cfg.params["k"], cfg.replicas,
                            cfg.seed, cfg.workers, v_grid=v_grid)
    col.header = ["v", "p", "ci_low", "ci_high"]
    for key, v in rep.extras["per_v"].items():
        col.rows.append([float(key), v["p"], v["ci"][0], v["ci"][1]])
    col.summary["reports"] = _reports_payload(rep)


register(
    "event-ek",
    [Param("L0", "int", default=16), Param("growth", "int", default=2),
     Param("k", "int", default=0), Param("v0", "float", default=0.5),
     Param("rho0", "float", default=1.0), Param("eps0", "float", default=0.25),
     Param("v_grid", "list[float]", default=[])],
    _run_ek,
    "fast-exit event frequency of the level-k renormalization box",
)


def _run_fk(cfg, col):
    sched = _schedule_from(cfg)
    rep = estimate_event_fk(cfg.rate(), sched, cfg.params["k"],
                            cfg.params["radius"], cfg.replicas, cfg.seed,
                            cfg.workers)
    col.header = ["k", "q", "ci_low", "ci_high", "confinement_freq"]
    col.rows.append([cfg.params["k"], rep.estimate, rep.ci_low, rep.ci_high,
                     rep.extras["confinement_freq"]])
    col.summary["reports"] = _reports_payload(rep)


register(
    "event-fk",
    [Param("L0", "int", default=16), Param("growth", "int", default=2),
     Param("k", "int", default=0), Param("v0", "float", default=0.5),
     Param("rho0", "float", default=1.0), Param("eps0", "float", default=0.25),
     Param("radius", "int", default=4)],
    _run_fk,
    "family-restricted sparse-occupation path event at level k",
)


# ---------------------------------------------------------------------------
# concentration / couplings
# ---------------------------------------------------------------------------

def _validate_epsilon(cfg):
    if not 0.0 < cfg.params["epsilon"] <= 1.0:
        raise ConfigInvalid("epsilon must lie in (0, 1]")


def _run_chernoff(cfg, col):
    rep = chernoff_check(cfg.rate(), cfg.params["rho"], cfg.params["epsilon"],
                         cfg.params["n"], cfg.replicas, cfg.seed)
    col.header = ["freq_upper", "bound_upper", "freq_lower", "bound_lower", "c_ld"]
    col.rows.append([rep.estimate, rep.extras["bound_upper"],
                     rep.extras["freq_lower"], rep.extras["bound_lower"],
                     rep.extras["c_ld"]])
    col.summary["reports"] = _reports_payload(rep)


register(
    "chernoff-check",
    [Param("rho", "float"), Param("epsilon", "float"), Param("n", "int")],
    _run_chernoff,
    "empirical deviation frequency of n-site sums against the computed bound",
    validate=_validate_epsilon,
)


def _run_sprinkled(cfg, col):
    col.header = ["t", "failure", "ci_low", "ci_high", "unmet_fraction",
                  "unmatchable_epoch_rate", "b_event_rate"]
    interval = (cfg.params["interval_lo"], cfg.params["interval_hi"])
    hits, trials, reports = [], [], []
    for t in cfg.params["t_grid"]:
        rep = sprinkled_failure_curve(
            cfg.rate(), cfg.params["rho"], cfg.params["epsilon"], interval,
            [t], cfg.replicas, cfg.seed, cfg.workers,
        )
        v = rep.extras["per_t"][f"{float(t):g}"]
        col.rows.append([t, v["failure"], v["ci"][0], v["ci"][1],
                         v["mean_unmet_fraction"], v["unmatchable_epoch_rate"],
                         v["b_event_rate"]])
        hits.append(round(v["failure"] * cfg.replicas))
        trials.append(cfg.replicas)
        reports.append(rep)
        col.summary["reports"] = _reports_payload(reports)
    ok, pvals = non_increasing_trend(hits, trials)
    col.summary["non_increasing"] = ok
    col.summary["trend_pvalues"] = pvals


register(
    "sprinkled-coupling",
    [Param("rho", "float"), Param("epsilon", "float"),
     Param("interval_lo", "int", default=-10), Param("interval_hi", "int", default=10),
     Param("t_grid", "list[float]", help="coupling horizons")],
    _run_sprinkled,
    "domination-failure frequency of the matching coupling across horizons",
    validate=_validate_epsilon,
)


def _validate_simultaneous(cfg):
    _validate_epsilon(cfg)
    if cfg.params["rho"] > cfg.params["rho_prime"]:
        raise ConfigInvalid("rho must be <= rho_prime")
    if cfg.params["rho"] - cfg.params["epsilon"] <= 0:
        raise ConfigInvalid("rho - epsilon must stay positive")


def _run_simultaneous(cfg, col):
    rep = simultaneous_failure_curve(
        cfg.rate(), cfg.params["rho"], cfg.params["rho_prime"],
        cfg.params["epsilon"],
        (cfg.params["interval_lo"], cfg.params["interval_hi"]),
        cfg.params["t_grid"], cfg.replicas, cfg.seed, cfg.workers,
    )
    col.header = ["t", "failure", "ci_low", "ci_high"]
    for key, v in rep.extras["per_t"].items():
        col.rows.append([float(key), v["failure"], v["ci"][0], v["ci"][1]])
    col.summary["reports"] = _reports_payload(rep)


register(
    "simultaneous-coupling",
    [Param("rho", "float"), Param("rho_prime", "float"), Param("epsilon", "float"),
     Param("interval_lo", "int", default=-5), Param("interval_hi", "int", default=5),
     Param("t_grid", "list[float]")],
    _run_simultaneous,
    "joint-domination failure frequency of the four-process coupling",
    validate=_validate_simultaneous,
)


# ---------------------------------------------------------------------------
# infection tails / excursions / raw runs / oracle
# ---------------------------------------------------------------------------

def _run_tails(cfg, col):
    rep = displacement_tail_report(cfg.rate(), cfg.params["rho"],
                                   cfg.params["t"], cfg.replicas, cfg.seed)
    col.header = ["event", "freq", "ci_low", "ci_high"]
    for nm in ("forward", "backtrack", "retreat"):
        v = rep.extras[nm]
        col.rows.append([nm, v["estimate"], v["ci_low"], v["ci_high"]])
    col.summary["reports"] = _reports_payload(rep)


register(
    "displacement-tails",
    [Param("rho", "float"), Param("t", "float")],
    _run_tails,
    "frequencies of the three crude front tail events",
)


def _run_excursion(cfg, col):
    rep = occupancy_excursion_check(cfg.rate(), cfg.params["rho"],
                                    cfg.params["t"], cfg.params["u_grid"],
                                    cfg.replicas, cfg.seed)
    col.header = ["u", "threshold", "freq"]
    for u, a, f in zip(rep.u_grid, rep.thresholds, rep.frequencies):
        col.rows.append([u, a, f])
    col.summary["reports"] = {
        "levels": rep.level_grid.tolist(),
        "level_frequencies": rep.level_frequencies.tolist(),
        "decay_slope": rep.decay_slope,
        "replicas": rep.replicas,
    }


register(
    "excursion-check",
    [Param("rho", "float"), Param("t", "float"),
     Param("u_grid", "list[float]", default=[2, 4, 8, 16])],
    _run_excursion,
    "occupancy excursion frequencies at the origin",
)


def _run_raw(cfg, col):
    dom = Domain(cfg.params["domain"], cfg.params["n_sites"])
    rate = cfg.rate()
    col.header = ["replica", "time", "site", "count"]
    reports = []
    for rep_i in range(cfg.replicas):
        cfg0 = sample_stationary_config(rate, cfg.params["rho"], dom,
                                        cfg.seed, rep_i)
        traj = evolve(cfg0, rate, dom, cfg.params["t_end"], cfg.seed, rep_i,
                      snapshot_times=cfg.params["snapshot_times"] or
                      [cfg.params["t_end"]])
        for ti, tval in enumerate(traj.snapshot_times):
            for site, c in enumerate(traj.snapshots[ti]):
                col.rows.append([rep_i, float(tval), site, int(c)])
        reports.append({"replica": rep_i, "total": traj.final.total})
    col.summary["reports"] = reports


def _validate_raw(cfg):
    if cfg.params["domain"] not in ("torus", "interval"):
        raise ConfigInvalid("domain must be torus or interval")
    if cfg.params["t_end"] <= 0:
        raise ConfigInvalid("t_end must be positive")


register(
    "raw-simulate",
    [Param("n_sites", "int", default=16), Param("rho", "float", default=1.0),
     Param("t_end", "float", default=1.0),
     Param("snapshot_times", "list[float]", default=[]),
     Param("domain", "str", default="torus")],
    _run_raw,
    "plain trajectory snapshots from a stationary start",
    validate=_validate_raw,
)


def _run_oracle(cfg, col):
    rate = cfg.rate()
    pairs = cfg.params["pairs"]
    if len(pairs) % 2:
        raise ConfigInvalid("pairs must list n_sites/n_particles alternating")
    cases = [(pairs[i], pairs[i + 1]) for i in range(0, len(pairs), 2)]
    col.header = ["n_sites", "n_particles", "residual", "tv_vs_simulator"]
    results = []
    for (n, m) in cases:
        resid = check_canonical_stationarity(rate, n, m)
        tv = ""
        if cfg.params["tv_replicas"] > 0:
            tv = _oracle_tv(rate, n, m, cfg.params["tv_time"],
                            cfg.params["tv_replicas"], cfg.seed, cfg.workers)
        col.rows.append([n, m, resid, tv])
        results.append({"n_sites": n, "n_particles": m, "residual": resid,
                        "tv": tv if tv != "" else None})
        col.summary["reports"] = results


def _oracle_tv_replica(rep, rate, init, t, seed, n_sites):
    run = engine.run_counts(rate, init, t, seed, rep)
    return tuple(int(c) for c in run.counts)


def _oracle_tv(rate, n, m, t, replicas, seed, workers):
    gen = build_generator(rate, n, m)
    init = np.zeros(n, np.int64)
    init[0] = m
    v0 = np.zeros(gen.space.n_states)
    v0[gen.space.index_of(tuple(init))] = 1.0
    vt = transient_distribution(gen, v0, t)
    rows = map_replicas(_oracle_tv_replica, replicas, workers,
                        rate, init, t, seed, n)
    emp = np.zeros(gen.space.n_states)
    for state in rows:
        emp[gen.space.index_of(state)] += 1
    return total_variation(emp / replicas, vt)


register(
    "oracle-check",
    [Param("pairs", "list[int]", default=[3, 2, 4, 3, 5, 3],
           help="alternating n_sites n_particles"),
     Param("tv_time", "float", default=1.0),
     Param("tv_replicas", "int", default=0,
           help="simulator-vs-oracle TV sample size (0 disables)")],
    _run_oracle,
    "exact stationarity residuals and transient TV against the simulator",
)
