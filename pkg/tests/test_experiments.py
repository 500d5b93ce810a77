import math

import numpy as np
import pytest

from zrplab import engine
from zrplab.errors import RateFunctionError, SupportViolation
from zrplab.experiments import (
    BoxGeometry,
    ExperimentReport,
    FunctionalSpec,
    RenormSchedule,
    SpaceTimeBox,
    chernoff_check,
    dist_h,
    dist_v,
    estimate_event_ek,
    estimate_event_fk,
    estimate_front_velocity,
    horizontal_decoupling_test,
    make_horizontal_boxes,
    make_vertical_boxes,
    martingale_concentration_test,
    martingale_increment_tails,
    non_increasing_trend,
    sprinkled_failure_curve,
    vertical_decoupling_grid,
    vertical_decoupling_test,
    wilson_ci,
)
from zrplab.kernels import PATH_ALWAYS_LEFT, PATH_ALWAYS_RIGHT
from zrplab.workers import map_replicas


class TestReportMachinery:
    def test_wilson_brackets(self):
        p, lo, hi = wilson_ci(7, 100)
        assert lo <= p <= hi
        assert 0.0 <= lo and hi <= 1.0

    def test_report_validates(self):
        with pytest.raises(ValueError):
            ExperimentReport("x", 0.5, 0.6, 0.7, 10, 1)

    def test_trend_detects_increase(self):
        ok, _ = non_increasing_trend([0, 200], [1000, 1000])
        assert not ok
        ok, _ = non_increasing_trend([200, 150, 10], [1000, 1000, 1000])
        assert ok


class TestSchedule:
    def test_recursions_exact(self):
        s = RenormSchedule(L0=100, growth=3, k_max=2, v0=0.7, rho0=1.3, eps0=0.5)
        ls = s.scales()
        assert list(ls) == [100, 100 ** 3, 100 ** 9]
        vs = s.velocities()
        assert vs[1] == pytest.approx(0.7 + 1.0)
        assert vs[2] == pytest.approx(0.7 + 1.0 + 0.25)
        rho = s.densities()
        assert rho[0] == pytest.approx(rho[1] * (1 + 100 ** (-1 / 16)))
        rho_p = s.densities_prime()
        assert rho_p[1] == pytest.approx(1.3 * (1 + 100 ** (-1 / 16)))
        eps = s.epsilons()
        assert eps[1] == pytest.approx(0.5 * (1 - 1.0))
        assert s.ell()[0] == 10

    def test_level_out_of_range(self):
        s = RenormSchedule(L0=16, growth=2, k_max=1)
        with pytest.raises(ValueError):
            s.level(2)

    def test_box_geometry(self):
        s = RenormSchedule(L0=16, growth=2, k_max=1)
        g = BoxGeometry(s, 0)
        assert g.half_width == 4 * 16 ** 2
        assert g.horizon == 16
        assert g.confinement_half_width() == g.half_width // 4
        assert g.count_anchors_meeting_next_level() > 0

    def test_distances(self):
        b1 = SpaceTimeBox(0, 4, 0.0, 2.0)
        b2 = SpaceTimeBox(10, 14, 5.0, 7.0)
        assert dist_h(b1, b2) == 6
        assert dist_v(b1, b2) == 3.0
        assert dist_v(b1, b1) == 0.0


class TestFunctionals:
    def test_unknown_kind(self):
        with pytest.raises(SupportViolation):
            FunctionalSpec("weird", SpaceTimeBox(0, 1, 0, 1))

    def test_slice_outside_box(self):
        with pytest.raises(SupportViolation):
            FunctionalSpec("slice_sum", SpaceTimeBox(0, 1, 0.0, 1.0),
                           threshold=1, slice_time=2.0)

    def test_monotone_signs(self):
        f = FunctionalSpec("empty_box", SpaceTimeBox(0, 1, 0.0, 1.0))
        assert f.monotone_sign == -1
        g = FunctionalSpec("max_occupancy", SpaceTimeBox(0, 1, 0.0, 1.0), 2)
        assert g.monotone_sign == 1


class TestVelocity:
    def test_single_particle_symmetric(self, id_rate):
        # a lone infected particle's front is a symmetric walk
        horizons = (6.0,)
        n = engine.domain_size(id_rate, horizons[-1])
        vals = []
        for rep in range(800):
            counts = np.zeros(n, np.int64)
            counts[n // 2] = 1
            flags = np.zeros(n, np.uint8)
            flags[n // 2] = 1
            run = engine.run_infection(id_rate, counts, flags, horizons[-1],
                                       71, rep, origin=n // 2, horizons=horizons)
            vals.append(run.front_at[0] / horizons[-1])
        vals = np.array(vals)
        se = vals.std(ddof=1) / math.sqrt(len(vals))
        assert abs(vals.mean()) <= 3 * se

    def test_positive_velocity_small_scale(self, id_rate):
        reps = estimate_front_velocity(id_rate, 1.0, [30.0], 300, seed=72)
        r = reps[0]
        assert r.ci_low > 0.0
        assert r.ci_high < 5.0


class TestMartingaleExperiments:
    def test_concentration_report(self, id_rate):
        rep = martingale_concentration_test(id_rate, 1.0, [10.0, 20.0], 0.5,
                                            300, seed=73)
        per = rep.extras["per_L"]
        assert set(per) == {"10.0", "20.0"}
        for v in per.values():
            assert v["zero_mean_ok"]

    def test_increment_tails(self, id_rate):
        rep = martingale_increment_tails(id_rate, 1.0, 8, 200, seed=74,
                                         u_grid=(1, 2, 4))
        freqs = rep.extras["frequencies"]
        assert all(b <= a for a, b in zip(freqs, freqs[1:]))
        assert rep.extras["sqrt_slope"] is None or rep.extras["sqrt_slope"] < 0


class TestDecoupling:
    def test_constant_functional_gap_nonpositive(self, id_rate):
        # f == 1 via a zero-threshold integrated functional
        b1 = SpaceTimeBox(-4, -1, 0.0, 2.0)
        b2 = SpaceTimeBox(-4, -1, 6.0, 8.0)
        f1 = FunctionalSpec("integrated_occupancy", b1, 0.0)
        f2 = FunctionalSpec("integrated_occupancy", b2, 0.0)
        rep = vertical_decoupling_test(id_rate, 1.0, 0.5, f1, f2, 200, seed=75)
        assert rep.extras["lhs"] == 1.0
        assert rep.extras["rhs"] == 1.0
        assert rep.estimate <= 0.0

    def test_monotone_direction_guard(self, id_rate):
        f1, f2 = make_vertical_boxes("slice_sum", 4, 8.0, 4)
        with pytest.raises(RateFunctionError):
            vertical_decoupling_test(id_rate, 1.0, -0.5, f1, f2, 10, seed=76)

    def test_non_increasing_pair_with_negative_epsilon(self, id_rate):
        b1 = SpaceTimeBox(-4, -1, 0.0, 1.0)
        b2 = SpaceTimeBox(-4, -1, 9.0, 10.0)
        f1 = FunctionalSpec("empty_box", b1)
        f2 = FunctionalSpec("empty_box", b2)
        rep = vertical_decoupling_test(id_rate, 1.0, -0.5, f1, f2, 600, seed=77)
        # sprinkling downward can only raise the empty-box means
        assert rep.estimate <= rep.ci_high

    def test_grid_monotone_upper_ci(self, id_rate):
        reps = vertical_decoupling_grid(id_rate, 1.0, 0.5, "slice_sum", 8, 9,
                                        [8.0, 64.0], 500, seed=78)
        ups = [r.extras["gap_upper_ci"] for r in reps]
        assert ups[1] <= ups[0]
        assert reps[1].estimate < 0

    def test_horizontal_constant_zero_cov(self, id_rate):
        b1 = SpaceTimeBox(-4, -1, 0.0, 1.0)
        f1 = FunctionalSpec("integrated_occupancy", b1, 0.0)  # constant 1
        f2, _ = make_horizontal_boxes("slice_sum", 4, 16, 4, 1.0)
        rep = horizontal_decoupling_test(id_rate, 1.0, f1, f2, 200, seed=79)
        assert rep.ci_low <= 0.0 <= rep.ci_high

    def test_horizontal_hypothesis_flag(self, id_rate):
        f1, f2 = make_horizontal_boxes("slice_sum", 8, 4, 9, 2.0)
        rep = horizontal_decoupling_test(id_rate, 1.0, f1, f2, 100, seed=80)
        assert not rep.extras["hypothesis_met"]
        f1, f2 = make_horizontal_boxes("slice_sum", 8, 64, 9, 2.0)
        rep = horizontal_decoupling_test(id_rate, 1.0, f1, f2, 100, seed=81)
        assert rep.extras["hypothesis_met"]


class TestRenormEvents:
    def test_ek_monotone_in_velocity(self, id_rate):
        sched = RenormSchedule(L0=16, growth=2, k_max=1, v0=0.5, rho0=1.0)
        rep = estimate_event_ek(id_rate, sched, 0, 300, seed=82,
                                v_grid=[0.25, 0.5, 1.0, 2.0])
        ps = [rep.extras["per_v"][k]["p"] for k in ("0.25", "0.5", "1", "2")]
        assert all(b <= a for a, b in zip(ps, ps[1:]))

    def test_dk_frequency_grows_with_scale(self, id_rate):
        freqs = []
        for l0 in (8, 16):
            sched = RenormSchedule(L0=l0, growth=2, k_max=1, v0=0.5, rho0=1.0)
            rep = estimate_event_ek(id_rate, sched, 0, 200, seed=83)
            freqs.append(rep.extras["confinement_freq"])
        assert freqs[1] >= freqs[0] - 0.05

    def test_huge_velocity_kills_event(self, id_rate):
        sched = RenormSchedule(L0=16, growth=2, k_max=1, v0=50.0, rho0=1.0)
        rep = estimate_event_ek(id_rate, sched, 0, 200, seed=84)
        assert rep.estimate == 0.0

    def test_fk_single_particle_always_hits(self, id_rate):
        # one particle total: the window never reaches 2, V = 0 for every path
        n = 200
        lo = np.zeros(n, np.int64)
        hi = np.zeros(n, np.int64)
        hi[n // 2] = 1
        run = engine.run_pair(id_rate, lo, hi, 16.0, 85, 0,
                              paths=[(PATH_ALWAYS_LEFT, 0, 50, None),
                                     (PATH_ALWAYS_RIGHT, 0, 50, None)],
                              radius=4)
        assert np.all(run.path_vfrac == 0.0)

    def test_fk_v_monotone_in_radius(self, id_rate):
        # extremal paths ignore the window, so V is pathwise monotone in R
        sched = RenormSchedule(L0=16, growth=2, k_max=1, v0=0.5, rho0=0.2)
        lvl = sched.level(0)
        vals = {}
        for radius in (0, 2):
            n = 320
            lo, hi, _ = engine.maximal_pair_counts(
                id_rate, lvl["rho"], lvl["rho_prime"], n, 86, 0)
            run = engine.run_pair(id_rate, lo, hi, float(lvl["L"]), 86, 0,
                                  paths=[(PATH_ALWAYS_RIGHT, 0, 64, None)],
                                  radius=radius)
            vals[radius] = run.path_vfrac[0]
        assert vals[0] <= vals[2] + 1e-12

    def test_fk_report_shape(self, id_rate):
        sched = RenormSchedule(L0=8, growth=2, k_max=1, v0=0.5, rho0=0.5,
                               eps0=0.25)
        rep = estimate_event_fk(id_rate, sched, 0, 2, 100, seed=87)
        assert 0.0 <= rep.estimate <= 1.0
        assert "lower bound" in rep.extras["estimate_kind"]


class TestChernoffCheck:
    def test_bound_dominates(self, id_rate):
        rep = chernoff_check(id_rate, 1.0, 0.5, 50, 20_000, seed=88)
        assert rep.extras["upper_dominates"]
        assert rep.estimate <= rep.extras["bound_upper"] + 0.01


class TestSprinkledCurve:
    def test_failure_decreases(self, id_rate):
        rep = sprinkled_failure_curve(id_rate, 1.0, 0.5, (-10, 10),
                                      [16.0, 64.0], 150, seed=89)
        assert rep.extras["non_increasing"]
        per = rep.extras["per_t"]
        assert per["16"]["failure"] >= per["64"]["failure"] - 0.1


def _square_plus(rep, base):
    return base + rep * rep


class TestWorkerPool:
    def test_worker_counts_agree(self, id_rate):
        a = map_replicas(_square_plus, 17, 1, 10)
        b = map_replicas(_square_plus, 17, 3, 10)
        assert a == b

    def test_experiment_worker_invariance(self, id_rate):
        r1 = estimate_front_velocity(id_rate, 1.0, [6.0], 24, seed=90, workers=1)
        r2 = estimate_front_velocity(id_rate, 1.0, [6.0], 24, seed=90, workers=4)
        assert r1[0].estimate == r2[0].estimate
        assert r1[0].ci_low == r2[0].ci_low


class TestRemainingInvariants:
    def test_monotone_functional_on_coupled_pairs(self, id_rate):
        # pathwise f(lower) <= f(upper) for non-decreasing box functionals
        n = 128
        bad = 0
        for rep in range(60):
            lo0, hi0, _ = engine.maximal_pair_counts(id_rate, 0.6, 1.1, n, 95, rep)
            run = engine.run_pair(id_rate, lo0, hi0, 4.0, 95, rep,
                                  snapshot_times=[2.0, 4.0])
            for snap_lo, snap_hi in zip(run.snapshots_lo, run.snapshots_hi):
                for thr in (4, 8):
                    f_lo = int(snap_lo[60:68].sum() >= thr)
                    f_hi = int(snap_hi[60:68].sum() >= thr)
                    if f_lo > f_hi:
                        bad += 1
        assert bad == 0

    def test_failure_decreases_in_epsilon(self, id_rate):
        fails = []
        for eps in (0.25, 1.0):
            n_fail = 0
            for rep in range(120):
                run = engine.run_sprinkled(id_rate, 1.0, eps, (-10, 10), 32.0,
                                           96, rep)
                n_fail += not run.domination_ok
            fails.append(n_fail)
        ok, _ = non_increasing_trend(fails, [120, 120])
        assert ok

    def test_martingale_increment_regression(self, id_rate):
        # conditional zero mean: regress unit increments on time-t statistics
        horizons = tuple(float(t) for t in range(0, 13))
        n = engine.domain_size(id_rate, horizons[-1])
        incs, feats = [], []
        for rep in range(800):
            counts, flags, origin = engine.standard_infection_start(
                id_rate, 1.0, n, 97, rep, t_end=horizons[-1])
            run = engine.run_infection(id_rate, counts, flags, horizons[-1],
                                       97, rep, origin=origin, horizons=horizons)
            if run.escaped:
                continue
            d = np.diff(run.martingale_at)
            for j in range(len(d)):
                incs.append(d[j])
                feats.append([1.0, run.front_at[j], run.martingale_at[j]])
        incs = np.array(incs)
        x = np.array(feats)
        beta, *_ = np.linalg.lstsq(x, incs, rcond=None)
        resid = incs - x @ beta
        cov = np.linalg.inv(x.T @ x) * (resid @ resid) / (len(incs) - x.shape[1])
        se = np.sqrt(np.diag(cov))
        assert np.all(np.abs(beta) <= 3.5 * se + 1e-9)
