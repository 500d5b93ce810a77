"""Couplings between zero range processes.

Three constructions:

* the basic monotone coupling, one mark field read at two occupancies, with
  sitewise domination by construction;
* the sprinkled matching coupling, two independent mark fields with a
  subinterval matching rebuilt at the epoch times, met pairs locked
  together at the pile bottoms;
* the simultaneous coupling of two basic-coupled pairs with a two-phase
  matching schedule.

The heavy lifting is in the compiled engines; this module owns the public
types, the standalone matching constructor, and the diagnostics export.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import engine, rng
from .engine import PairRun, SimultaneousRun, SprinkledRun
from .errors import RateFunctionError, Unmatchable
from .rates import RateFunction
from .sim import Domain, PileConfig, SiteConfig, Trajectory, torus


@dataclass
class MatchingState:
    """An injective partial matching between two particle populations."""

    pairs: dict                  # low-id -> high-id
    met: dict                    # low-id -> bool
    unmatched_low: list
    unmatched_high: list
    epoch: int = 0
    max_distance: int = 0

    def validate(self):
        highs = list(self.pairs.values())
        if len(set(highs)) != len(highs):
            raise ValueError("matching is not injective")


def build_matching(low: PileConfig, high: PileConfig, interval, sub_len: int,
                   domain: Domain | None = None, *, epoch: int = 0,
                   previous: MatchingState | None = None) -> MatchingState:
    """Match every low-population particle in the interval to a distinct
    high-population particle in the same subinterval.

    Same-site pairs are taken first (the largest possible number per site),
    the remainder leftmost-to-leftmost inside each subinterval.  Met couples
    of ``previous`` are preserved untouched.  Raises :class:`Unmatchable`
    on the first subinterval holding more low than high particles.
    """
    counts_low = low.to_site_config().counts
    counts_high = high.to_site_config().counts
    if domain is None:
        domain = torus(len(counts_low))
    a, b = int(interval[0]), int(interval[1])
    if sub_len < 1:
        raise ValueError("subinterval length must be >= 1")
    kept_pairs = {}
    kept_met = {}
    locked_high = set()
    locked_low = set()
    if previous is not None:
        for lo_id, hi_id in previous.pairs.items():
            if previous.met.get(lo_id):
                kept_pairs[lo_id] = hi_id
                kept_met[lo_id] = True
                locked_low.add(lo_id)
                locked_high.add(hi_id)

    # particle positions, bottom-up within each site
    def positions(cfg, skip):
        out = {}
        for s, pile in enumerate(cfg.piles):
            c = domain.coord(s)
            out[c] = [pid for pid in pile if pid not in skip]
        return out

    pos_low = positions(low, locked_low)
    pos_high = positions(high, locked_high)

    pairs = dict(kept_pairs)
    met = dict(kept_met)
    max_dist = 0
    n_sub = math.ceil((b - a + 1) / sub_len)
    leftover_low = []
    leftover_high = []
    for j in range(n_sub):
        lo_edge = a + j * sub_len
        hi_edge = min(lo_edge + sub_len - 1, b)
        rem_low = []
        rem_high = []
        for c in range(lo_edge, hi_edge + 1):
            ls = pos_low.get(c, [])
            hs = pos_high.get(c, [])
            n_same = min(len(ls), len(hs))
            for i in range(n_same):
                pairs[ls[i]] = hs[i]
                met[ls[i]] = True  # same site: the couple has already met
            rem_low.extend((c, pid) for pid in ls[n_same:])
            rem_high.extend((c, pid) for pid in hs[n_same:])
        if len(rem_low) > len(rem_high):
            raise Unmatchable(j, len(rem_low), len(rem_high))
        for (cl, pl), (ch, ph) in zip(rem_low, rem_high):
            pairs[pl] = ph
            met[pl] = False
            max_dist = max(max_dist, abs(ch - cl))
        leftover_high.extend(pid for _, pid in rem_high[len(rem_low):])
    matched_high = set(pairs.values())
    all_low = {pid for pile in low.piles for pid in pile}
    all_high = {pid for pile in high.piles for pid in pile}
    state = MatchingState(
        pairs=pairs, met=met,
        unmatched_low=sorted(all_low - set(pairs)),
        unmatched_high=sorted(all_high - matched_high),
        epoch=epoch, max_distance=max_dist,
    )
    state.validate()
    return state


@dataclass
class CouplingRun:
    """Outcome of one sprinkled-coupling run on its target interval."""

    rho: float
    epsilon: float
    interval: tuple
    t: float
    domination_ok: bool
    failure_sites: list
    unmet_fraction: float
    unmatchable_epochs: int
    b_event: bool
    meetings: int
    seed: int
    replica: int
    eta: SiteConfig = None
    eta_bar: SiteConfig = None
    extras: dict = field(default_factory=dict)


def basic_monotone_coupling(rate: RateFunction, rho: float, rho_prime: float,
                            domain: Domain, t_end: float, seed: int,
                            replica: int = 0, *, snapshot_times=()) -> PairRun:
    """Evolve a dominated pair from one mark field.

    The initial pair is the sitewise maximal coupling of the two marginals
    (exact conditional law of the surplus); the shared field then preserves
    domination at every event.
    """
    if rho > rho_prime:
        raise RateFunctionError("rho must be <= rho_prime")
    lo, hi, _ = engine.maximal_pair_counts(rate, rho, rho_prime, domain.size,
                                           seed, replica)
    return engine.run_pair(rate, lo, hi, t_end, seed, replica,
                           torus=domain.is_torus, origin=domain.origin_offset,
                           snapshot_times=snapshot_times)


def sprinkled_coupling_run(rate: RateFunction, rho: float, epsilon: float,
                           interval, t: float, seed: int, replica: int = 0, *,
                           log_bbar: bool = False) -> CouplingRun:
    """Full matching-coupling run; returns the domination verdict on the
    interval plus the diagnostics that drive the failure-event estimates."""
    run = engine.run_sprinkled(rate, rho, epsilon, interval, t, seed, replica,
                               log_bbar=log_bbar)
    if run.violations or run.met_separation_violations:
        raise RuntimeError(
            f"coupling invariant violated: {run.violations} mark-field, "
            f"{run.met_separation_violations} met-separation"
        )
    return CouplingRun(
        rho=rho, epsilon=epsilon, interval=tuple(run.interval), t=t,
        domination_ok=run.domination_ok, failure_sites=run.failure_sites,
        unmet_fraction=run.unmet_fraction,
        unmatchable_epochs=run.unmatchable_epochs,
        b_event=run.b_event, meetings=run.meetings,
        seed=seed, replica=replica,
        eta=SiteConfig(run.counts_lo), eta_bar=SiteConfig(run.counts_hi),
        extras={
            "unmatchable_subintervals": run.unmatchable_subintervals,
            "n_epochs": run.n_epochs,
            "h_interval": run.h_interval,
            "n_sites": run.n_sites,
            "bbar_log": run.bbar_log,
        },
    )


def simultaneous_coupling_run(rate: RateFunction, rho: float, rho_prime: float,
                              epsilon: float, interval, t: float, seed: int,
                              replica: int = 0, *, rho_floor: float = 1e-9
                              ) -> SimultaneousRun:
    """Two basic-coupled pairs with the two-phase matching schedule; the
    verdict is the joint domination event on the interval."""
    run = engine.run_simultaneous(rate, rho, rho_prime, epsilon, interval, t,
                                  seed, replica, rho_floor=rho_floor)
    if run.violations or run.pair_order_violations:
        raise RuntimeError(
            f"coupling invariant violated: {run.violations} mark-field, "
            f"{run.pair_order_violations} pair-order"
        )
    return run


def coupling_diagnostics_csv(runs, path):
    """CSV rows: replica, t, epsilon, domination_ok, unmet_fraction,
    unmatchable_epochs, b_event."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replica", "t", "epsilon", "domination_ok",
                    "unmet_fraction", "unmatchable_epochs", "b_event"])
        for r in runs:
            w.writerow([r.replica, repr(float(r.t)), repr(float(r.epsilon)),
                        int(r.domination_ok), repr(float(r.unmet_fraction)),
                        r.unmatchable_epochs, int(r.b_event)])
