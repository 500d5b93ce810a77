import numpy as np
import pytest

from zrplab.errors import StateSpaceTooLarge
from zrplab.oracle import (
    build_generator,
    canonical_weights,
    check_canonical_stationarity,
    enumerate_states,
    oracle_report,
    total_variation,
    transient_distribution,
)


class TestStateSpace:
    def test_counts(self):
        space = enumerate_states(3, 2)
        assert space.n_states == 6  # C(2+3-1, 3-1)

    def test_index_round_trip(self):
        space = enumerate_states(4, 3)
        for i, state in enumerate(space.states):
            assert space.index_of(tuple(state)) == i

    def test_cap(self):
        with pytest.raises(StateSpaceTooLarge):
            enumerate_states(30, 30, cap=1000)


class TestGenerator:
    def test_two_sites_one_particle(self, id_rate):
        gen = build_generator(id_rate, 2, 1)
        assert gen.space.n_states == 2
        q = gen.q.toarray()
        # both directions land on the other site of the 2-torus
        assert q[0, 1] == pytest.approx(1.0)
        assert q[0, 0] == pytest.approx(-1.0)

    def test_row_sums_zero(self, bent_rate):
        gen = build_generator(bent_rate, 4, 3)
        assert np.abs(np.asarray(gen.q.sum(axis=1))).max() < 1e-14

    def test_hand_enumeration(self, id_rate):
        # N=3, M=2: from (2,0,0) rate g(2)/2 = 1 to (1,1,0) and (1,0,1)
        gen = build_generator(id_rate, 3, 2)
        i = gen.space.index_of((2, 0, 0))
        j1 = gen.space.index_of((1, 1, 0))
        j2 = gen.space.index_of((1, 0, 1))
        q = gen.q.toarray()
        assert q[i, j1] == pytest.approx(1.0)
        assert q[i, j2] == pytest.approx(1.0)
        assert q[i, i] == pytest.approx(-2.0)
        # from (1,1,0): each particle leaves at rate 1, split to neighbors
        k = gen.space.index_of((1, 1, 0))
        assert q[k, k] == pytest.approx(-2.0)


class TestStationarity:
    @pytest.mark.parametrize("nm", [(3, 2), (4, 3), (5, 3)])
    def test_identity_residual(self, id_rate, nm):
        assert check_canonical_stationarity(id_rate, *nm) <= 1e-12

    def test_nonlinear_residual(self, bent_rate):
        assert check_canonical_stationarity(bent_rate, 4, 3) <= 1e-12

    def test_perturbed_weight_caught(self, id_rate):
        gen = build_generator(id_rate, 3, 2)
        w = canonical_weights(id_rate, gen.space)
        w[0] *= 2.0
        resid = np.abs(w @ gen.q).max() / w.sum()
        assert resid > 1e-3


class TestTransient:
    def test_t_zero(self, id_rate):
        gen = build_generator(id_rate, 3, 2)
        v0 = np.zeros(gen.space.n_states)
        v0[0] = 1.0
        assert np.array_equal(transient_distribution(gen, v0, 0.0), v0)

    def test_probability_vector(self, bent_rate):
        gen = build_generator(bent_rate, 4, 3)
        v0 = np.zeros(gen.space.n_states)
        v0[gen.space.index_of((3, 0, 0, 0))] = 1.0
        vt = transient_distribution(gen, v0, 2.0)
        assert np.all(vt >= -1e-15)
        assert vt.sum() == pytest.approx(1.0, abs=1e-10)

    def test_long_horizon_hits_canonical(self, id_rate):
        gen = build_generator(id_rate, 3, 2)
        v0 = np.zeros(gen.space.n_states)
        v0[gen.space.index_of((2, 0, 0))] = 1.0
        vt = transient_distribution(gen, v0, 50.0)
        w = canonical_weights(id_rate, gen.space)
        assert total_variation(vt, w / w.sum()) <= 1e-6


def test_report_json(id_rate):
    import json

    doc = json.loads(oracle_report(id_rate, [(3, 2)]))
    assert doc["residuals"][0]["residual"] <= 1e-12
