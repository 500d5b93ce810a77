import math

import numpy as np
import pytest

from zrplab import engine, rng
from zrplab.coupling import (
    MatchingState,
    basic_monotone_coupling,
    build_matching,
    coupling_diagnostics_csv,
    simultaneous_coupling_run,
    sprinkled_coupling_run,
)
from zrplab.engine import EventLog, maximal_pair_counts
from zrplab.errors import RateFunctionError, Unmatchable
from zrplab.infection import FrontPath, occupation_fraction
from zrplab.oracle import build_generator, total_variation, transient_distribution
from zrplab.rates import fugacity_of_density, marginal_pmf
from zrplab.rng import draw_candidate
from zrplab.sim import PileConfig, SiteConfig, Trajectory, torus


class TestBuildMatching:
    def test_same_site_everything(self):
        low = PileConfig.from_counts([2, 1])
        high = PileConfig.from_counts([2, 1])
        st = build_matching(low, high, (-1, 0), 2, domain=torus(2))
        assert len(st.pairs) == 3
        assert all(st.met.values())
        assert st.max_distance == 0

    def test_cross_pair_distance_one(self):
        dom = torus(2)
        low = PileConfig.from_counts([1, 0])
        high = PileConfig.from_counts([0, 1])
        st = build_matching(low, high, (-1, 0), 2, domain=dom)
        assert len(st.pairs) == 1
        assert not any(st.met.values())
        assert st.max_distance == 1

    def test_unmatchable(self):
        dom = torus(2)
        low = PileConfig.from_counts([0, 3])    # coord 0 holds 3
        high = PileConfig.from_counts([0, 2])   # coord 0 holds 2
        with pytest.raises(Unmatchable) as err:
            build_matching(low, high, (0, 0), 1, domain=dom)
        assert err.value.j == 0
        assert err.value.n_low == 1 and err.value.n_high == 0

    def test_met_pairs_preserved(self):
        dom = torus(4)
        low = PileConfig.from_counts([1, 1, 0, 0])
        high = PileConfig.from_counts([1, 1, 1, 0])
        st = build_matching(low, high, (-2, 1), 4, domain=dom)
        met_pairs = {k: v for k, v in st.pairs.items() if st.met[k]}
        assert len(met_pairs) == 2
        st2 = build_matching(low, high, (-2, 1), 2, domain=dom, previous=st,
                             epoch=1)
        for k, v in met_pairs.items():
            assert st2.pairs[k] == v and st2.met[k]

    def test_injective(self):
        dom = torus(6)
        low = PileConfig.from_counts([1, 2, 0, 1, 0, 0])
        high = PileConfig.from_counts([2, 2, 1, 1, 0, 1])
        st = build_matching(low, high, (-3, 2), 3, domain=dom)
        st.validate()
        assert len(st.unmatched_low) == 0


class TestBasicCoupling:
    def test_equal_densities_identical(self, id_rate):
        dom = torus(32)
        run = basic_monotone_coupling(id_rate, 1.0, 1.0, dom, 4.0, seed=50)
        assert np.array_equal(run.counts_lo, run.counts_hi)
        assert run.violations == 0

    def test_domination_every_replica(self, id_rate):
        dom = torus(48)
        for rep in range(200):
            run = basic_monotone_coupling(id_rate, 0.5, 1.0, dom, 2.0,
                                          seed=51, replica=rep)
            assert run.violations == 0
            assert np.all(run.counts_lo <= run.counts_hi)
            assert run.counts_lo.sum() <= run.counts_hi.sum()

    def test_rho_order_enforced(self, id_rate):
        with pytest.raises(RateFunctionError):
            basic_monotone_coupling(id_rate, 1.0, 0.5, torus(16), 1.0, seed=52)

    def test_upper_marginal_vs_oracle(self, id_rate):
        # from any fixed initial pair, the upper process alone is a plain
        # zero range process; check its transient against uniformization
        n, t_end = 3, 1.0
        reps = 20_000
        hi0 = np.array([2, 1, 0], np.int64)
        lo0 = np.array([1, 0, 0], np.int64)
        gen = build_generator(id_rate, n, int(hi0.sum()))
        v0 = np.zeros(gen.space.n_states)
        v0[gen.space.index_of(tuple(hi0))] = 1.0
        vt = transient_distribution(gen, v0, t_end)
        emp = np.zeros(gen.space.n_states)
        for rep in range(reps):
            run = engine.run_pair(id_rate, lo0, hi0, t_end, 53, rep)
            emp[gen.space.index_of(tuple(run.counts_hi))] += 1
        assert total_variation(emp / reps, vt) <= 0.02


def _python_pair_replay(rate, counts_lo0, counts_hi0, t_end, seed, replica,
                        stream):
    """Shared-field pair replay producing per-process accepted event logs."""
    n_sites = len(counts_lo0)
    lo = [int(c) for c in counts_lo0]
    hi = [int(c) for c in counts_hi0]
    slot_site = [x for x in range(n_sites) for _ in range(hi[x])]
    m = len(slot_site)
    thr = rate.thinning_thresholds(128)
    k0 = np.uint64(seed & 0xFFFFFFFF)
    k1 = np.uint64((seed >> 32) & 0xFFFFFFFF)
    rep = np.uint64(replica)
    st = np.uint64(stream)
    t = 0.0
    idx = 0
    ev_lo, ev_hi = [], []
    while True:
        u_dt, u_pick, u_acc = draw_candidate(np.uint64(idx), rep, st, k0, k1)
        idx += 1
        t_next = t + (-math.log1p(-u_dt) / (rate.gamma_plus * m))
        if t_next >= t_end:
            break
        t = t_next
        scaled = u_pick * m
        p = min(int(scaled), m - 1)
        x = slot_site[p]
        k = hi[x]
        nh = (scaled - p) * k
        n = min(int(nh) + 1, k)
        h = -1 if (nh - (n - 1)) < 0.5 else 1
        if u_acc > thr[n - 1]:
            continue
        y = (x + h) % n_sites
        both = n <= lo[x]
        hi[x] -= 1
        hi[y] += 1
        slot_site[p] = y
        ev_hi.append((t, x, n, u_acc, h))
        if both:
            lo[x] -= 1
            lo[y] += 1
            ev_lo.append((t, x, n, u_acc, h))
        assert lo[x] <= hi[x] and lo[y] <= hi[y]
    return lo, hi, ev_lo, ev_hi


def _as_trajectory(rate, counts0, final, events, t_end, dom):
    arr = np.array(events, dtype=np.float64).reshape(-1, 5)
    log = EventLog(arr[:, 0], arr[:, 1].astype(np.int64), arr[:, 2].astype(np.int64),
                   arr[:, 3], arr[:, 4].astype(np.int64),
                   np.ones(len(arr), np.uint8))
    return Trajectory(domain=dom, t_end=t_end, snapshot_times=np.zeros(0),
                      snapshots=np.zeros((0, dom.size), np.int64),
                      initial=SiteConfig(np.array(counts0)),
                      final=SiteConfig(np.array(final)), events=log,
                      seed=0, replica=0, stream=0, initial_total=sum(counts0))


class TestOccupationMonotonicity:
    def test_v_monotone_on_coupled_pair(self, id_rate):
        n = 48
        dom = torus(n)
        for rep in range(6):
            lo0, hi0, _ = maximal_pair_counts(id_rate, 0.6, 1.2, n, 54, rep)
            lo, hi, ev_lo, ev_hi = _python_pair_replay(
                id_rate, lo0, hi0, 3.0, 54, rep, rng.STREAM_MARKS)
            tr_lo = _as_trajectory(id_rate, lo0, lo, ev_lo, 3.0, dom)
            tr_hi = _as_trajectory(id_rate, hi0, hi, ev_hi, 3.0, dom)
            path = FrontPath(np.array([0.0]), np.array([0]))
            for R in (1, 3):
                v_lo = occupation_fraction(path, tr_lo, R=R, t=3.0).value
                v_hi = occupation_fraction(path, tr_hi, R=R, t=3.0).value
                assert v_lo <= v_hi + 1e-12


class TestSprinkled:
    def test_epsilon_precondition(self, id_rate):
        with pytest.raises(RateFunctionError):
            sprinkled_coupling_run(id_rate, 1.0, 1.5, (-5, 5), 16.0, seed=55)

    def test_empty_lower_process(self, id_rate):
        run = sprinkled_coupling_run(id_rate, 0.0, 1.0, (-5, 5), 16.0, seed=56)
        assert run.domination_ok

    def test_invariants_over_replicas(self, id_rate):
        for rep in range(60):
            run = sprinkled_coupling_run(id_rate, 1.0, 0.5, (-10, 10), 16.0,
                                         seed=57, replica=rep)
            # met pairs never separate and the mark-field bookkeeping is
            # consistent (asserted inside, raises on violation)
            assert run.eta.total == run.extras["n_sites"] * 0 + run.eta.total

    def test_met_pairs_colocated_at_horizon(self, id_rate):
        run = engine.run_sprinkled(id_rate, 1.0, 0.5, (-10, 10), 16.0,
                                   seed=58, replica=3)
        assert run.met_separation_violations == 0
        assert run.violations == 0

    def test_replay_independence(self, id_rate):
        for rep in range(30):
            a = engine.run_sprinkled(id_rate, 1.0, 0.5, (-8, 8), 16.0,
                                     seed=59, replica=rep, log_bbar=True)
            b = engine.run_sprinkled(id_rate, 1.0, 0.5, (-8, 8), 16.0,
                                     seed=59, replica=rep, log_bbar=True,
                                     stream2=rng.STREAM_REPLAY_MARKS_2)
            assert np.array_equal(a.bbar_log.t, b.bbar_log.t)
            assert np.array_equal(a.bbar_log.x, b.bbar_log.x)
            assert np.array_equal(a.bbar_log.n, b.bbar_log.n)
            assert np.array_equal(a.bbar_log.h, b.bbar_log.h)
            assert np.array_equal(a.counts_hi, b.counts_hi)

    def test_unmet_fraction_drops_with_horizon(self, id_rate):
        fracs = []
        for t in (4.0, 32.0):
            vals = [sprinkled_coupling_run(id_rate, 1.0, 0.5, (-8, 8), t,
                                           seed=60, replica=rep).unmet_fraction
                    for rep in range(40)]
            fracs.append(np.mean(vals))
        assert fracs[1] < fracs[0]

    def test_diagnostics_csv(self, id_rate, tmp_path):
        runs = [sprinkled_coupling_run(id_rate, 1.0, 0.5, (-5, 5), 8.0,
                                       seed=61, replica=rep) for rep in range(3)]
        path = tmp_path / "diag.csv"
        coupling_diagnostics_csv(runs, path)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("replica,t,epsilon,domination_ok")
        assert len(lines) == 4


class TestSimultaneous:
    def test_epsilon_guard(self, id_rate):
        with pytest.raises(RateFunctionError):
            simultaneous_coupling_run(id_rate, 1.0, 1.0, 0.0, (-5, 5), 16.0,
                                      seed=62)

    def test_density_floor(self, id_rate):
        with pytest.raises(RateFunctionError):
            simultaneous_coupling_run(id_rate, 0.5, 1.0, 0.5, (-5, 5), 16.0,
                                      seed=63)

    def test_rho_order(self, id_rate):
        with pytest.raises(RateFunctionError):
            simultaneous_coupling_run(id_rate, 1.2, 1.0, 0.5, (-5, 5), 16.0,
                                      seed=64)

    def test_pairwise_order_and_conservation(self, id_rate):
        for rep in range(40):
            run = simultaneous_coupling_run(id_rate, 1.0, 1.2, 0.5, (-5, 5),
                                            16.0, seed=65, replica=rep)
            assert run.pair_order_violations == 0
            assert run.violations == 0
            assert np.all(run.eta <= run.eta_prime)
            assert np.all(run.eta_bar <= run.eta_bar_prime)

    def test_joint_failure_nonincreasing(self, id_rate):
        from zrplab.experiments import simultaneous_failure_curve

        rep = simultaneous_failure_curve(id_rate, 1.0, 1.0, 0.5, (-5, 5),
                                         [16.0, 48.0], 40, seed=66)
        assert rep.extras["non_increasing"]
