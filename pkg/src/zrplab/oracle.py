"""Exact finite-state reference for tiny tori.

Enumerates all occupancy vectors with N sites and M particles, assembles the
sparse jump-rate matrix, checks stationarity of the fixed-particle-number
weight w(eta) ~ prod_x 1/g(eta(x))!, and computes transient distributions by
uniformization.  Used to certify the event-driven simulator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np
import scipy.sparse as sp

from .errors import StateSpaceTooLarge
from .rates import RateFunction

STATE_CAP = 200_000


@dataclass(frozen=True)
class StateSpace:
    """Enumeration of occupancy vectors on an N-torus with M particles."""

    n_sites: int
    n_particles: int
    states: np.ndarray          # (n_states, n_sites) int64
    index: dict                 # tuple(state) -> row

    @property
    def n_states(self) -> int:
        return len(self.states)

    def index_of(self, config) -> int:
        return self.index[tuple(int(c) for c in config)]


def enumerate_states(n_sites: int, n_particles: int, cap: int = STATE_CAP) -> StateSpace:
    """All weak compositions of M into N parts, stars-and-bars order."""
    n_states = comb(n_particles + n_sites - 1, n_sites - 1)
    if n_states > cap:
        raise StateSpaceTooLarge(
            f"(N={n_sites}, M={n_particles}) has {n_states} states, cap {cap}"
        )
    states = np.zeros((n_states, n_sites), dtype=np.int64)
    row = 0
    for bars in combinations(range(n_particles + n_sites - 1), n_sites - 1):
        prev = -1
        for j, b in enumerate(bars):
            states[row, j] = b - prev - 1
            prev = b
        states[row, n_sites - 1] = n_particles + n_sites - 2 - prev
        row += 1
    index = {tuple(s): i for i, s in enumerate(states.tolist())}
    return StateSpace(n_sites, n_particles, states, index)


@dataclass(frozen=True)
class GeneratorMatrix:
    """Sparse rate matrix over a StateSpace; rows sum to zero."""

    space: StateSpace
    q: sp.csr_matrix


def build_generator(rate: RateFunction, n_sites: int, n_particles: int,
                    cap: int = STATE_CAP) -> GeneratorMatrix:
    """Exact generator: each site expels its top rate g(eta(x)), split 1/2-1/2
    between the two neighbors (which coincide on a 2-torus)."""
    space = enumerate_states(n_sites, n_particles, cap)
    n = space.n_states
    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    for i, eta in enumerate(space.states):
        for x in range(n_sites):
            k = eta[x]
            if k == 0:
                continue
            half = rate.g(int(k)) / 2.0
            for h in (-1, 1):
                y = (x + h) % n_sites
                if y == x:
                    continue
                dest = eta.copy()
                dest[x] -= 1
                dest[y] += 1
                j = space.index_of(dest)
                rows.append(i)
                cols.append(j)
                vals.append(half)
                diag[i] -= half
    rows.extend(range(n))
    cols.extend(range(n))
    vals.extend(diag)
    q = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    q.sum_duplicates()
    return GeneratorMatrix(space, q)


def canonical_weights(rate: RateFunction, space: StateSpace) -> np.ndarray:
    """Unnormalized invariant weights at fixed particle number.

    The fugacity factors of the product marginals cancel on a fixed-M sector,
    leaving w(eta) ~ prod_x 1/g(eta(x))!; computed in log space.
    """
    k_top = int(space.states.max())
    log_fact = np.array([rate.log_g_factorial(k) for k in range(k_top + 1)])
    logs = -log_fact[space.states].sum(axis=1)
    return np.exp(logs - logs.max())


def check_canonical_stationarity(rate: RateFunction, n_sites: int, n_particles: int,
                                 cap: int = STATE_CAP) -> float:
    """Residual ||w^T Q||_inf / ||w||_1 of the canonical weight vector."""
    gen = build_generator(rate, n_sites, n_particles, cap)
    w = canonical_weights(rate, gen.space)
    resid = np.abs(w @ gen.q)
    return float(resid.max() / w.sum())


def transient_distribution(gen: GeneratorMatrix, initial_dist, t: float,
                           tol: float = 1e-10) -> np.ndarray:
    """exp(Q t) action on a distribution row-vector via uniformization.

    The Poisson series is truncated when the accumulated weight reaches
    1 - tol; long horizons are split into segments so the Poisson weights
    stay representable.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    v = np.asarray(initial_dist, dtype=np.float64).copy()
    if t == 0.0:
        return v
    lam = float(np.abs(gen.q.diagonal()).max())
    if lam == 0.0:
        return v
    n_seg = max(1, int(np.ceil(lam * t / 200.0)))
    dt = t / n_seg
    p = sp.eye(gen.space.n_states, format="csr") + gen.q.multiply(1.0 / lam)
    p = sp.csr_matrix(p)
    seg_tol = tol / n_seg
    for _ in range(n_seg):
        mu = lam * dt
        weight = np.exp(-mu)
        acc = weight * v
        term = v.copy()
        total = weight
        j = 0
        while total < 1.0 - seg_tol:
            j += 1
            term = term @ p
            weight *= mu / j
            acc += weight * term
            total += weight
            if j > 100 * (mu + 10):
                raise RuntimeError("uniformization failed to converge")
        v = acc / acc.sum()
    return v


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def oracle_report(rate: RateFunction, cases, tv_table=None) -> str:
    """JSON report of stationarity residuals and optional TV comparisons."""
    doc = {
        "rate_hash": rate_hash(rate),
        "residuals": [
            {"n_sites": n, "n_particles": m,
             "residual": check_canonical_stationarity(rate, n, m)}
            for (n, m) in cases
        ],
    }
    if tv_table is not None:
        doc["tv_table"] = tv_table
    return json.dumps(doc, sort_keys=True, indent=2)


def rate_hash(rate: RateFunction) -> str:
    import hashlib

    h = hashlib.sha256()
    h.update(rate.values.tobytes())
    h.update(np.float64([rate.gamma_minus, rate.gamma_plus, rate.gamma_tail]).tobytes())
    return h.hexdigest()[:16]
