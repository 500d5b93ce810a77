import math

import numpy as np
import pytest
from scipy import stats as sstats

from zrplab import engine, rng
from zrplab.errors import InconsistentState
from zrplab.infection import (
    NEG_INFINITY,
    FrontPath,
    InfectionState,
    displacement_tail_report,
    eta_allowed_check,
    front_martingale,
    init_infection,
    occupation_fraction,
    replay_infection,
    step_infection,
)
from zrplab.rates import conditioned_marginal_cdf
from zrplab.sim import MarkEvent, SiteConfig, evolve, torus


def _state(dom, xi, zeta, front):
    return InfectionState(xi=np.array(xi, np.int64), zeta=np.array(zeta, np.int64),
                          front=front, domain=dom)


class TestInit:
    def test_anchor_occupied(self):
        dom = torus(8)
        counts = np.zeros(8, np.int64)
        counts[dom.site(0)] = 2
        st = init_infection(SiteConfig(counts), dom, anchor=(0, 0.0))
        assert st.front == 0
        assert st.xi[dom.site(0)] == 2
        st.validate()

    def test_empty_left_half_sentinel(self):
        dom = torus(8)
        counts = np.zeros(8, np.int64)
        counts[dom.site(2)] = 1  # right of the anchor only
        st = init_infection(SiteConfig(counts), dom, anchor=(0, 0.0))
        assert st.front is NEG_INFINITY
        assert st.zeta.sum() == 1

    def test_split_left_right(self, id_rate):
        dom = torus(16)
        cfg = engine.draw_product_config(id_rate, 1.0, 16, 21, 0)[0]
        st = init_infection(SiteConfig(cfg), dom, anchor=(0, 0.0))
        for s in range(16):
            if dom.coord(s) <= 0:
                assert st.zeta[s] == 0
            else:
                assert st.xi[s] == 0
        assert np.array_equal(st.eta, cfg)

    def test_conditioned_law_at_origin(self, id_rate):
        # resample-until-front policy: site-0 law is the conditioned marginal
        reps = 30_000
        vals = np.zeros(reps, np.int64)
        for rep in range(reps):
            counts, _ = engine.draw_product_config(
                id_rate, 1.0, 8, 22, rep, conditioned_site=4, min_occupancy=1)
            vals[rep] = counts[4]
        cdf = conditioned_marginal_cdf(id_rate, 1.0, 1)
        pmf = np.diff(np.concatenate([[0.0], cdf]))
        kmax = 6
        obs = np.bincount(np.minimum(vals - 1, kmax), minlength=kmax + 1)
        probs = np.append(pmf[1:kmax + 1], 1.0 - pmf[1:kmax + 1].sum())
        _, p = sstats.chisquare(obs, probs * reps)
        assert p > 0.01


class TestStep:
    def test_infected_mover_takes_site(self):
        dom = torus(8)
        st = _state(dom, [0, 0, 0, 0, 2, 0, 0, 0], [0, 0, 0, 0, 0, 1, 0, 0], 0)
        ev = MarkEvent(0.5, 4, 1, 0.1, 1, True)  # site 4 = coord 0 -> coord 1
        out = step_infection(st, ev)
        assert out.front == 1
        assert out.xi[dom.site(1)] == 2 and out.zeta[dom.site(1)] == 0
        out.validate()

    def test_front_retreats_on_emptying(self):
        dom = torus(8)
        st = _state(dom, [0, 0, 0, 1, 1, 0, 0, 0], [0] * 8, 0)
        ev = MarkEvent(0.2, 4, 1, 0.1, -1, True)
        out = step_infection(st, ev)
        assert out.front == -1
        assert out.xi[dom.site(-1)] == 2
        out.validate()

    def test_healthy_joins_infected(self):
        dom = torus(8)
        st = _state(dom, [0, 0, 0, 0, 1, 0, 0, 0], [0, 0, 0, 1, 0, 0, 0, 0], 0)
        ev = MarkEvent(0.3, 3, 1, 0.1, 1, True)  # healthy from coord -1 lands on front
        out = step_infection(st, ev)
        assert out.front == 0
        assert out.xi[dom.site(0)] == 2
        assert out.zeta.sum() == 0
        out.validate()

    def test_inconsistent_state_rejected(self):
        dom = torus(8)
        st = _state(dom, [1, 0, 0, 0, 0, 0, 0, 0], [1, 0, 0, 0, 0, 0, 0, 0], -4)
        ev = MarkEvent(0.1, 0, 1, 0.0, 1, True)
        with pytest.raises(InconsistentState):
            step_infection(st, ev)

    def test_unaccepted_event_rejected(self):
        dom = torus(8)
        st = _state(dom, [0, 0, 0, 0, 1, 0, 0, 0], [0] * 8, 0)
        with pytest.raises(ValueError):
            step_infection(st, MarkEvent(0.1, 4, 1, 0.9, 1, False))


class TestReplayInvariants:
    def test_overlay_invariants_over_replicas(self, id_rate):
        n = engine.domain_size(id_rate, 3.0)
        dom = torus(n)
        bad = 0
        for rep in range(60):
            counts, flags, origin = engine.standard_infection_start(
                id_rate, 1.0, n, 31, rep, t_end=3.0)
            traj = evolve(SiteConfig(counts), id_rate, dom, 3.0, 31, rep,
                          log_events=True)
            xi0 = np.where(flags == 1, counts, 0)
            st0 = InfectionState(xi=xi0, zeta=counts - xi0, front=0, domain=dom)
            # replay asserts all-or-nothing, eta tracking, irreversibility
            final, path, _ = replay_infection(st0, traj)
            if final.infected_total() < st0.infected_total():
                bad += 1
        assert bad == 0

    def test_kernel_agrees_with_replay(self, id_rate):
        n = engine.domain_size(id_rate, 4.0)
        dom = torus(n)
        for rep in range(15):
            counts, flags, origin = engine.standard_infection_start(
                id_rate, 1.0, n, 32, rep, t_end=4.0)
            run = engine.run_infection(id_rate, counts, flags, 4.0, 32, rep,
                                       origin=origin, horizons=(4.0,))
            traj = evolve(SiteConfig(counts), id_rate, dom, 4.0, 32, rep,
                          log_events=True)
            xi0 = np.where(flags == 1, counts, 0)
            st0 = InfectionState(xi=xi0, zeta=counts - xi0, front=0, domain=dom)
            final, path, mart = replay_infection(st0, traj, rate=id_rate,
                                                 collect_martingale=True,
                                                 guard=engine.GUARD_WIDTH)
            assert final.front == run.front
            assert abs(mart.final() - run.martingale_at[-1]) < 1e-9
            assert np.array_equal(final.eta, run.counts)


class TestMartingale:
    def test_zero_horizon(self, id_rate):
        dom = torus(32)
        counts = np.zeros(32, np.int64)
        counts[16] = 1
        traj = evolve(SiteConfig(counts), id_rate, dom, 1e-9, 33, log_events=True)
        st0 = _state(dom, counts, np.zeros(32, np.int64), 0)
        mart = front_martingale(traj, st0, id_rate)
        assert mart.values[0] == 0.0

    def test_single_particle_front_is_walk(self, id_rate):
        # front pile always holds exactly one particle: the indicator never
        # fires and M_t = r_t - r_0
        dom = torus(64)
        counts = np.zeros(64, np.int64)
        counts[32] = 1
        traj = evolve(SiteConfig(counts), id_rate, dom, 6.0, 34, log_events=True)
        st0 = _state(dom, counts, np.zeros(64, np.int64), 0)
        _, path, mart = replay_infection(st0, traj, rate=id_rate,
                                         collect_martingale=True)
        assert np.array_equal(mart.values[:-1], path.values - path.values[0])

    def test_zero_mean(self, id_rate):
        n_sites = engine.domain_size(id_rate, 12.0)
        vals = []
        for rep in range(1200):
            counts, flags, origin = engine.standard_infection_start(
                id_rate, 1.0, n_sites, 35, rep, t_end=12.0)
            run = engine.run_infection(id_rate, counts, flags, 12.0, 35, rep,
                                       origin=origin, horizons=(12.0,))
            if not run.escaped:
                vals.append(run.martingale_at[0])
        vals = np.array(vals)
        se = vals.std(ddof=1) / math.sqrt(len(vals))
        assert abs(vals.mean()) <= 3 * se


class TestPaths:
    def _traj_with_front(self, id_rate, rep=0):
        n = engine.domain_size(id_rate, 4.0)
        dom = torus(n)
        counts, flags, origin = engine.standard_infection_start(
            id_rate, 1.0, n, 36, rep, t_end=4.0)
        traj = evolve(SiteConfig(counts), id_rate, dom, 4.0, 36, rep,
                      log_events=True)
        xi0 = np.where(flags == 1, counts, 0)
        st0 = InfectionState(xi=xi0, zeta=counts - xi0, front=0, domain=dom)
        _, path, _ = replay_infection(st0, traj)
        return traj, path

    def test_front_is_allowed(self, id_rate):
        traj, path = self._traj_with_front(id_rate)
        assert eta_allowed_check(path, traj, interval=(-30, 30), anchor=0)

    def test_constant_path_allowed(self, id_rate):
        traj, _ = self._traj_with_front(id_rate)
        const = FrontPath(np.array([0.0]), np.array([0]))
        assert eta_allowed_check(const, traj, interval=(-5, 5), anchor=0)

    def test_move_without_event_rejected(self, id_rate):
        traj, _ = self._traj_with_front(id_rate)
        bogus = FrontPath(np.array([0.0, 1e-7]), np.array([0, 1]))
        assert not eta_allowed_check(bogus, traj, interval=(-5, 5), anchor=0,
                                     time_tol=1e-12)

    def test_big_jump_rejected(self, id_rate):
        traj, _ = self._traj_with_front(id_rate)
        jumpy = FrontPath(np.array([0.0, 1.0]), np.array([0, 2]))
        assert not eta_allowed_check(jumpy, traj, interval=(-5, 5), anchor=0)

    def test_confinement_rejected(self, id_rate):
        traj, path = self._traj_with_front(id_rate)
        if np.any(np.abs(path.values) > 1):
            assert not eta_allowed_check(path, traj, interval=(-1, 1), anchor=0)


class TestOccupation:
    def test_two_frozen_particles(self, id_rate):
        dom = torus(16)
        counts = np.zeros(16, np.int64)
        counts[8] = 2
        traj = evolve(SiteConfig(counts), id_rate, dom, 0.05, 37, log_events=True)
        path = FrontPath(np.array([0.0]), np.array([0]))
        stat = occupation_fraction(path, traj, R=2, t=0.05)
        # both particles start at the path position; value 1 unless a jump
        # leaves the window, which R=2 makes impossible by t=0.05 only if no
        # accepted events; allow exact computation instead
        acc = int(traj.events.accepted.sum())
        if acc == 0:
            assert stat.value == 1.0
        else:
            assert 0.0 <= stat.value <= 1.0

    def test_empty_configuration(self, id_rate):
        dom = torus(16)
        traj = evolve(SiteConfig(np.zeros(16, np.int64)), id_rate, dom, 2.0, 38,
                      log_events=True)
        path = FrontPath(np.array([0.0]), np.array([0]))
        assert occupation_fraction(path, traj, R=4, t=2.0).value == 0.0

    def test_single_particle_never_two(self, id_rate):
        dom = torus(16)
        counts = np.zeros(16, np.int64)
        counts[8] = 1
        traj = evolve(SiteConfig(counts), id_rate, dom, 3.0, 39, log_events=True)
        for r in (0, 2, 8):
            path = FrontPath(np.array([0.0]), np.array([0]))
            assert occupation_fraction(path, traj, R=r, t=3.0).value == 0.0

    def test_monotone_in_radius(self, id_rate):
        dom = torus(32)
        counts, _ = engine.draw_product_config(id_rate, 1.0, 32, 40, 0)
        traj = evolve(SiteConfig(counts), id_rate, dom, 3.0, 40, log_events=True)
        path = FrontPath(np.array([0.0]), np.array([0]))
        vals = [occupation_fraction(path, traj, R=r, t=3.0).value for r in (0, 1, 2, 4)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))


class TestDisplacementTails:
    def test_degenerate_horizon(self, id_rate):
        rep = displacement_tail_report(id_rate, 1.0, 0.0, 10, seed=41)
        for nm in ("forward", "backtrack", "retreat"):
            assert rep.extras[nm]["estimate"] == 0.0

    def test_small_at_moderate_horizon(self, id_rate):
        rep = displacement_tail_report(id_rate, 1.0, 10.0, 400, seed=42)
        for nm in ("forward", "backtrack", "retreat"):
            assert rep.extras[nm]["estimate"] < 1e-2
