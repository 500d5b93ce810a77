"""Acceptance suite: every criterion at its stated scale and tolerance.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one verdict line
per criterion.  These are the slow, full-scale checks; the module tests
cover the same machinery at desk speed.
"""

import json
import math
import subprocess
import sys

import numpy as np
import pytest
from scipy import stats as sstats

from zrplab import engine, rng
from zrplab.experiments import (
    chernoff_check,
    estimate_front_velocity,
    horizontal_decoupling_grid,
    martingale_concentration_test,
    non_increasing_trend,
    sprinkled_failure_curve,
    vertical_decoupling_grid,
)
from zrplab.infection import InfectionState, replay_infection
from zrplab.oracle import (
    build_generator,
    check_canonical_stationarity,
    total_variation,
    transient_distribution,
)
from zrplab.rates import (
    chernoff_bounds,
    density_of_fugacity,
    fugacity_of_density,
    identity_rate,
    sample_marginal,
    validate_rate_function,
)
from zrplab.sim import SiteConfig, evolve, torus

pytestmark = pytest.mark.acceptance

SEED = 20260809


def _verdict(num, ok, detail):
    print(f"\nACCEPTANCE {num:2d} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def rate():
    return identity_rate(200)


@pytest.fixture(scope="module")
def bent():
    return validate_rate_function([0.0, 1.0, 2.4, 3.1], 0.5, 1.5, gamma_tail=1.0)


def test_criterion_01_oracle_stationarity(rate, bent):
    worst = 0.0
    for r in (rate, bent):
        for nm in ((3, 2), (4, 3), (5, 3)):
            worst = max(worst, check_canonical_stationarity(r, *nm))
    _verdict(1, worst <= 1e-12,
             f"canonical stationarity residual {worst:.3e} <= 1e-12 "
             f"on (3,2),(4,3),(5,3) for linear and bent rates")


def test_criterion_02_simulator_law(rate):
    n, m, t_end, reps = 4, 3, 1.0, 100_000
    gen = build_generator(rate, n, m)
    init = np.array([m, 0, 0, 0], np.int64)
    v0 = np.zeros(gen.space.n_states)
    v0[gen.space.index_of(tuple(init))] = 1.0
    vt = transient_distribution(gen, v0, t_end)
    emp = np.zeros(gen.space.n_states)
    for rep in range(reps):
        run = engine.run_counts(rate, init, t_end, SEED + 2, rep)
        emp[gen.space.index_of(tuple(run.counts))] += 1
    tv = total_variation(emp / reps, vt)
    _verdict(2, tv <= 0.02,
             f"evolve law vs uniformization oracle: TV {tv:.4f} <= 0.02 "
             f"(N=4, M=3, t=1, {reps} replicas)")


def test_criterion_03_exact_invariants(rate):
    reps = 1000
    seed = SEED + 3

    # conservation on the torus
    conserve_bad = 0
    n = 64
    for rep in range(reps):
        counts, _ = engine.draw_product_config(rate, 1.0, n, seed, rep)
        run = engine.run_counts(rate, counts, 5.0, seed, rep)
        if run.counts.sum() != counts.sum():
            conserve_bad += 1

    # all-or-nothing overlay, asserted per event by the replay
    n_inf = engine.domain_size(rate, 3.0)
    dom = torus(n_inf)
    overlay_bad = 0
    for rep in range(reps):
        counts, flags, origin = engine.standard_infection_start(
            rate, 1.0, n_inf, seed + 1, rep, t_end=3.0)
        traj = evolve(SiteConfig(counts), rate, dom, 3.0, seed + 1, rep,
                      log_events=True)
        xi0 = np.where(flags == 1, counts, 0)
        st0 = InfectionState(xi=xi0, zeta=counts - xi0, front=0, domain=dom)
        try:
            replay_infection(st0, traj)   # validates every event
        except Exception:
            overlay_bad += 1

    # basic-coupling sitewise domination, counted per event in the kernel
    pair_bad = 0
    for rep in range(reps):
        lo, hi, _ = engine.maximal_pair_counts(rate, 0.5, 1.0, 64, seed + 2, rep)
        run = engine.run_pair(rate, lo, hi, 3.0, seed + 2, rep)
        if run.violations or np.any(run.counts_lo > run.counts_hi):
            pair_bad += 1

    # met pairs never separate in the sprinkled coupling
    met_bad = 0
    for rep in range(reps):
        run = engine.run_sprinkled(rate, 1.0, 0.5, (-10, 10), 16.0,
                                   seed + 3, rep)
        if run.violations or run.met_separation_violations:
            met_bad += 1

    # replay identity: the high-density log ignores the second mark field
    replay_bad = 0
    for rep in range(reps):
        a = engine.run_sprinkled(rate, 1.0, 0.5, (-8, 8), 16.0, seed + 4, rep,
                                 log_bbar=True)
        b = engine.run_sprinkled(rate, 1.0, 0.5, (-8, 8), 16.0, seed + 4, rep,
                                 log_bbar=True,
                                 stream2=rng.STREAM_REPLAY_MARKS_2)
        same = (np.array_equal(a.bbar_log.t, b.bbar_log.t)
                and np.array_equal(a.bbar_log.x, b.bbar_log.x)
                and np.array_equal(a.bbar_log.n, b.bbar_log.n)
                and np.array_equal(a.bbar_log.h, b.bbar_log.h)
                and np.array_equal(a.counts_hi, b.counts_hi))
        if not same:
            replay_bad += 1

    bad = (conserve_bad, overlay_bad, pair_bad, met_bad, replay_bad)
    _verdict(3, sum(bad) == 0,
             f"zero violations across {reps} replicas each: conservation "
             f"{conserve_bad}, all-or-nothing {overlay_bad}, domination "
             f"{pair_bad}, met-separation {met_bad}, replay {replay_bad}")


def test_criterion_04_marginal_sampler(rate):
    gen = rng.stream(SEED + 4)
    draws = sample_marginal(rate, 1.0, gen, size=1_000_000)
    kmax = 11
    obs = np.bincount(np.minimum(draws, kmax), minlength=kmax + 1)
    probs = sstats.poisson.pmf(np.arange(kmax), 1.0)
    probs = np.append(probs, 1.0 - probs.sum())
    _, pval = sstats.chisquare(obs, probs * len(draws))

    worst = 0.0
    for rho in np.arange(0.1, 5.0 + 1e-9, 0.7):
        phi = fugacity_of_density(rate, rho)
        worst = max(worst, abs(density_of_fugacity(rate, phi) - rho))
    ok = pval > 0.01 and worst <= 2e-10
    _verdict(4, ok,
             f"Poisson(1) chi-square p={pval:.3f} > 0.01 on 1e6 draws; "
             f"inverse-density round trip max error {worst:.2e} <= 2e-10")


def test_criterion_05_concentration(rate):
    reps = 100_000
    checks = []
    for eps in (0.25, 0.5):
        for n in (50, 200):
            rep = chernoff_check(rate, 1.0, eps, n, reps, SEED + 5)
            freq = rep.estimate
            bound = rep.extras["bound_upper"]
            se = math.sqrt(max(freq * (1 - freq), 1.0 / reps) / reps)
            checks.append(freq <= bound + 3 * se)
    a = 1.5
    exact = math.exp(100 * (a - 1 - a * math.log(a)))
    cb = chernoff_bounds(rate, 1.0, 0.5, 100)
    rel = abs(cb.bound_upper - exact) / exact
    ok = all(checks) and rel <= 1e-6
    _verdict(5, ok,
             f"empirical deviation freq <= bound + 3 SE for all "
             f"(rho,eps,n) in 1x(0.25,0.5)x(50,200) at 1e5 replicas; "
             f"Poisson closed form relative error {rel:.2e} <= 1e-6")


def test_criterion_06_front_velocity(rate):
    reports = estimate_front_velocity(rate, 1.0, [200.0], 10_000, SEED + 6)
    rep = reports[0]
    ratio = rep.extras.get("halfwidth_ratio_1k", 0.0)
    ok = (rep.ci_low > 0.0 and rep.ci_high < 5.0
          and 0.27 <= ratio <= 0.37)
    _verdict(6, ok,
             f"mean r_t/t at t=200: {rep.estimate:.4f}, 95% CI "
             f"[{rep.ci_low:.4f}, {rep.ci_high:.4f}] in (0, 5); CI half-width "
             f"ratio 1e4/1e3 = {ratio:.3f} in [0.27, 0.37]; "
             f"escaped {rep.extras['escaped']}")


def test_criterion_07_martingale(rate):
    rep = martingale_concentration_test(rate, 1.0, [25.0, 50.0, 100.0], 0.5,
                                        10_000, SEED + 7)
    per = rep.extras["per_L"]
    zero_ok = all(v["zero_mean_ok"] for v in per.values())
    trend_ok = rep.extras["non_increasing"]
    freqs = [per[k]["freq"] for k in ("25.0", "50.0", "100.0")]
    _verdict(7, zero_ok and trend_ok,
             f"mean M_L within 3 SE of 0 at L=25,50,100; deviation "
             f"frequencies {['%.4f' % f for f in freqs]} non-increasing "
             f"(one-sided 0.05, 1e4 replicas)")


def test_criterion_08_sprinkled_coupling(rate):
    rep = sprinkled_failure_curve(rate, 1.0, 0.5, (-10, 10),
                                  [16.0, 64.0, 256.0], 10_000, SEED + 8)
    per = rep.extras["per_t"]
    freqs = [per[k]["failure"] for k in ("16", "64", "256")]
    ok = rep.extras["non_increasing"]
    _verdict(8, ok,
             f"domination-failure frequency over t=16,64,256: "
             f"{['%.4f' % f for f in freqs]} non-increasing "
             f"(one-sided 0.05, 1e4 replicas, I=[-10,10], eps=0.5)")


def test_criterion_09_decoupling_trends(rate):
    vert = vertical_decoupling_grid(rate, 1.0, 0.5, "slice_sum", 8, 9,
                                    [8.0, 32.0, 128.0], 10_000, SEED + 9)
    ups = [r.extras["gap_upper_ci"] for r in vert]
    vert_ok = all(b <= a for a, b in zip(ups, ups[1:])) and ups[-1] <= 0.0

    horiz = horizontal_decoupling_grid(rate, 1.0, "integrated_occupancy", 8,
                                       8 * 1.0 * 256.0, 256.0,
                                       [32, 128, 512], 10_000, SEED + 10)
    habs = [r.extras["abs_cov_upper_ci"] for r in horiz]
    horiz_ok = horiz[0].extras["non_increasing"]
    _verdict(9, vert_ok and horiz_ok,
             f"vertical gap upper CIs {['%.4f' % u for u in ups]} "
             f"non-increasing and <= 0 at dist_V=128; horizontal |cov| upper "
             f"CIs {['%.4f' % h for h in habs]} with no significant increase "
             f"(one-sided 0.05, 1e4 replicas each)")


def test_criterion_10_cli_determinism(rate, tmp_path):
    base = ["--seed", "12345", "--rho", "1.0", "--t-grid", "8", "--replicas",
            "64"]
    outputs = {}
    for tag, workers in (("a", "1"), ("b", "1"), ("c", "4")):
        out = tmp_path / tag
        cmd = [sys.executable, "-m", "zrplab.cli", "front-velocity",
               *base, "--workers", workers, "--out", str(out)]
        proc = subprocess.run(cmd, capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        outputs[tag] = (
            (out / "front-velocity.csv").read_bytes(),
            (out / "front-velocity_summary.json").read_bytes(),
        )
    ok = outputs["a"] == outputs["b"] == outputs["c"]
    _verdict(10, ok,
             "identical config+seed produce byte-identical CSV and JSON "
             "across two runs and worker counts {1, 4}")
