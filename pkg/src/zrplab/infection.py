"""Infected/healthy overlay: state, front tracking, path statistics.

The overlay splits the configuration into infected and healthy counts with
the all-or-nothing site rule: a healthy particle is infected the instant it
shares a site with an infected one.  The front is the rightmost infected
site.  Bulk experiments run through the compiled overlay engine; the pure
transition here (:func:`step_infection`) is the reference used to replay
logged trajectories exactly, and backs the martingale / path statistics.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import engine, rng
from .engine import InfectionRun
from .errors import FrontEscaped, InconsistentState
from .experiments.report import ExperimentReport, wilson_ci
from .rates import RateFunction
from .sim import Domain, MarkEvent, SiteConfig, Trajectory

NEG_INFINITY = None  # front sentinel when no site is infected


@dataclass
class InfectionState:
    xi: np.ndarray          # infected counts per site
    zeta: np.ndarray        # healthy counts per site
    front: int | None       # rightmost infected lattice coordinate
    domain: Domain

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=np.int64)
        self.zeta = np.asarray(self.zeta, dtype=np.int64)

    def validate(self):
        if np.any(self.xi < 0) or np.any(self.zeta < 0):
            raise InconsistentState("negative counts in overlay")
        if np.any(np.minimum(self.xi, self.zeta) > 0):
            raise InconsistentState("all-or-nothing violated: mixed site")
        inf_sites = np.where(self.xi > 0)[0]
        if len(inf_sites) == 0:
            if self.front is not NEG_INFINITY:
                raise InconsistentState("front set but nothing infected")
        else:
            coords = [self.domain.coord(int(s)) for s in inf_sites]
            if self.front != max(coords):
                raise InconsistentState(
                    f"front {self.front} != rightmost infected {max(coords)}"
                )

    @property
    def eta(self) -> np.ndarray:
        return self.xi + self.zeta

    def infected_total(self) -> int:
        return int(self.xi.sum())


def init_infection(eta: SiteConfig, domain: Domain, anchor=(0, 0.0)) -> InfectionState:
    """Infect everything at and left of the anchor coordinate.

    ``anchor`` is the space-time point (x, s): the configuration is read at
    time s and sites with coordinate <= x start infected.  Returns the
    sentinel front when the left half is empty; callers choose whether to
    resample (velocity experiments condition on a particle at the anchor).
    """
    x_anchor = int(anchor[0])
    counts = eta.counts
    xi = np.zeros_like(counts)
    zeta = counts.copy()
    front = NEG_INFINITY
    for s in range(domain.size):
        c = domain.coord(s)
        if c <= x_anchor and counts[s] > 0:
            xi[s] = counts[s]
            zeta[s] = 0
            if front is NEG_INFINITY or c > front:
                front = c
    return InfectionState(xi=xi, zeta=zeta, front=front, domain=domain)


def step_infection(state: InfectionState, event: MarkEvent) -> InfectionState:
    """Apply one accepted jump to the overlay.

    The mover carries its origin site's status; a site holding both statuses
    after the landing becomes entirely infected.  The front advances with an
    infected mover and is rescanned leftward when the front pile empties.
    """
    if not event.accepted:
        raise ValueError("step_infection expects an accepted event")
    if np.any(np.minimum(state.xi, state.zeta) > 0):
        raise InconsistentState("all-or-nothing violated on entry")
    domain = state.domain
    x = event.x
    y_coord = domain.coord(x) + event.h
    y = domain.site(y_coord)
    xi = state.xi.copy()
    zeta = state.zeta.copy()
    if xi[x] + zeta[x] == 0:
        raise InconsistentState(f"jump from empty site {x}")
    mover_infected = xi[x] > 0
    if mover_infected:
        xi[x] -= 1
    else:
        zeta[x] -= 1
    if mover_infected or xi[y] > 0:
        # either side infected: the whole destination site is infected
        xi[y] += zeta[y] + 1
        zeta[y] = 0
    else:
        zeta[y] += 1
    front = state.front
    if mover_infected and (front is NEG_INFINITY or y_coord > front):
        front = y_coord
    elif front is not NEG_INFINITY and xi[domain.site(front)] == 0:
        front = _rescan_front(xi, domain, front)
    out = InfectionState(xi=xi, zeta=zeta, front=front, domain=domain)
    return out


def _rescan_front(xi, domain, from_coord):
    for c in range(from_coord - 1, from_coord - domain.size, -1):
        if xi[domain.site(c)] > 0:
            return c
    return NEG_INFINITY


@dataclass
class FrontPath:
    """Right-continuous piecewise-constant front positions."""

    times: np.ndarray
    values: np.ndarray
    origin: tuple = (0, 0.0)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.int64)
        if np.any(np.diff(self.times) < 0):
            raise ValueError("front path times must be non-decreasing")

    def value_at(self, t: float) -> int:
        i = np.searchsorted(self.times, t, side="right") - 1
        if i < 0:
            raise ValueError("time before the path's first record")
        return int(self.values[i])


@dataclass
class OccupationStat:
    R: int
    horizon: float
    value: float

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0 + 1e-12:
            raise ValueError("occupation fraction must lie in [0, 1]")


@dataclass
class FrontMartingale:
    times: np.ndarray
    values: np.ndarray
    integrand_log: np.ndarray   # rows (t, integrand value)

    def final(self) -> float:
        return float(self.values[-1])


def replay_infection(initial: InfectionState, trajectory: Trajectory, *,
                     horizon: float | None = None, rate: RateFunction | None = None,
                     collect_martingale: bool = False, guard: int = 2):
    """Replay the overlay along a logged trajectory, asserting invariants.

    Returns (final_state, front_path, martingale | None).  Raises
    FrontEscaped when the front reaches the domain buffer.
    """
    if trajectory.events is None:
        raise ValueError("trajectory must carry an event log")
    if horizon is None:
        horizon = trajectory.t_end
    domain = initial.domain
    state = initial
    state.validate()
    eta_check = state.eta
    times = [0.0]
    values = [state.front if state.front is not NEG_INFINITY else np.iinfo(np.int64).min]
    mart_t = [0.0]
    mart_v = [0.0]
    integrand_log = []
    integral = 0.0
    r0 = state.front
    if collect_martingale and r0 is NEG_INFINITY:
        raise ValueError("martingale needs a finite initial front")
    t_prev = 0.0
    infected_prev = state.infected_total()
    escape = domain.size // 2 - guard

    def integrand(st):
        if st.front is NEG_INFINITY or rate is None:
            return 0.0
        k = int(st.eta[domain.site(st.front)])
        return 0.5 * float(rate.g(k)) if k >= 2 else 0.0

    cur_integrand = integrand(state)
    ev = trajectory.events
    for i in range(len(ev)):
        if not ev.accepted[i]:
            continue
        t = float(ev.t[i])
        if t > horizon:
            break
        integral += (t - t_prev) * cur_integrand
        t_prev = t
        event = MarkEvent(t, int(ev.x[i]), int(ev.n[i]), float(ev.u[i]),
                          int(ev.h[i]), True)
        prev_front = state.front
        state = step_infection(state, event)
        state.validate()
        if not np.array_equal(state.eta, _apply_move(eta_check, event, domain)):
            raise InconsistentState("overlay does not track the configuration")
        eta_check = state.eta
        if state.infected_total() < infected_prev:
            raise InconsistentState("infected count decreased")
        infected_prev = state.infected_total()
        if state.front is not NEG_INFINITY and abs(state.front) >= escape:
            raise FrontEscaped(f"front at {state.front} reached the domain buffer")
        if state.front != prev_front:
            times.append(t)
            values.append(state.front if state.front is not NEG_INFINITY
                          else np.iinfo(np.int64).min)
            if collect_martingale:
                mart_t.append(t)
                mart_v.append((state.front - r0) - integral)
        new_integrand = integrand(state)
        if new_integrand != cur_integrand:
            integrand_log.append((t, new_integrand))
            cur_integrand = new_integrand
    integral += (horizon - t_prev) * cur_integrand
    path = FrontPath(np.array(times), np.array(values))
    mart = None
    if collect_martingale:
        mart_t.append(horizon)
        mart_v.append((state.front - r0) - integral)
        mart = FrontMartingale(np.array(mart_t), np.array(mart_v),
                               np.array(integrand_log).reshape(-1, 2))
    return state, path, mart


def _apply_move(eta, event, domain):
    out = eta.copy()
    out[event.x] -= 1
    out[domain.site(domain.coord(event.x) + event.h)] += 1
    return out


def front_martingale(trajectory: Trajectory, initial: InfectionState,
                     rate: RateFunction, horizon: float | None = None) -> FrontMartingale:
    """Exact front martingale path: front displacement minus the compensator
    integral of half the front-site jump rate while it holds >= 2 particles."""
    _, _, mart = replay_infection(initial, trajectory, horizon=horizon,
                                  rate=rate, collect_martingale=True)
    return mart


def eta_allowed_check(path: FrontPath, trajectory: Trajectory,
                      interval=(-(10 ** 9), 10 ** 9), anchor: int = 0,
                      time_tol: float = 1e-9) -> bool:
    """Allowed-path conditions: starts at the anchor, confined to the
    interval, nearest-neighbor, and moves only at accepted jump events out
    of its current site."""
    if trajectory.events is None:
        raise ValueError("trajectory must carry an event log")
    if len(path.values) == 0 or path.values[0] != anchor:
        return False
    lo, hi = interval
    if np.any(path.values < lo) or np.any(path.values > hi):
        return False
    steps = np.diff(path.values)
    if np.any(np.abs(steps) > 1):
        return False
    ev = trajectory.events
    acc = ev.accepted == 1
    ev_t = ev.t[acc]
    ev_coord = np.array([trajectory.domain.coord(int(x)) for x in ev.x[acc]])
    for i in range(1, len(path.times)):
        if path.values[i] == path.values[i - 1]:
            continue
        t_move = path.times[i]
        here = path.values[i - 1]
        j = np.searchsorted(ev_t, t_move - time_tol)
        found = False
        while j < len(ev_t) and ev_t[j] <= t_move + time_tol:
            if ev_coord[j] == here:
                found = True
                break
            j += 1
        if not found:
            return False
    return True


def occupation_fraction(path: FrontPath, trajectory: Trajectory, R: int,
                        t: float) -> OccupationStat:
    """Fraction of [0, t] with >= 2 particles within distance R of the path,
    integrated exactly from the piecewise-constant event log."""
    if trajectory.events is None:
        raise ValueError("trajectory must carry an event log")
    if t > trajectory.t_end + 1e-12:
        raise ValueError("t exceeds the trajectory horizon")
    domain = trajectory.domain
    counts = trajectory.initial.counts.copy()

    def window_sum(center):
        return sum(int(counts[domain.site(c)]) for c in range(center - R, center + R + 1))

    pos = path.value_at(0.0)
    w = window_sum(pos)
    if t == 0.0:
        return OccupationStat(R=R, horizon=0.0, value=float(w >= 2))

    # merged timeline: configuration events and path moves, time-ordered;
    # at shared instants the configuration change applies first.
    ev = trajectory.events
    acc_idx = np.where(ev.accepted == 1)[0]
    timeline = [(float(ev.t[i]), 0, int(i)) for i in acc_idx if ev.t[i] <= t]
    timeline += [(float(path.times[j]), 1, int(j))
                 for j in range(1, len(path.times)) if path.times[j] <= t]
    timeline.sort(key=lambda e: (e[0], e[1]))

    occupied = 0.0
    t_prev = 0.0
    for t_ev, kind, i in timeline:
        if w >= 2:
            occupied += t_ev - t_prev
        t_prev = t_ev
        if kind == 0:
            x_coord = domain.coord(int(ev.x[i]))
            y_coord = x_coord + int(ev.h[i])
            counts[domain.site(x_coord)] -= 1
            counts[domain.site(y_coord)] += 1
            if abs(x_coord - pos) <= R:
                w -= 1
            if abs(y_coord - pos) <= R:
                w += 1
        else:
            pos = int(path.values[i])
            w = window_sum(pos)
    if w >= 2:
        occupied += t - t_prev
    return OccupationStat(R=R, horizon=t, value=occupied / t)


# ---------------------------------------------------------------------------
# bulk front experiments through the compiled overlay engine
# ---------------------------------------------------------------------------

def displacement_thresholds(rate: RateFunction, rho: float, t: float):
    """Cutoffs of the three front-displacement tail events.

    The forward excursion uses the linearized bound constant
    (2 + 4 gamma_plus)(rho + 1) + 1 times t^2; backtrack and retreat use
    (2 gamma_plus + 1) t.
    """
    c_a = (2.0 + 4.0 * rate.gamma_plus) * (rho + 1.0) + 1.0
    return c_a * t * t, (2.0 * rate.gamma_plus + 1.0) * t


def displacement_tail_report(rate: RateFunction, rho: float, t: float,
                             replicas: int, seed: int, *,
                             domain_sites: int | None = None) -> ExperimentReport:
    """Frequencies of the three crude front tail events with Wilson CIs."""
    if t == 0.0:
        zero = {"estimate": 0.0, "ci_low": 0.0, "ci_high": 0.0}
        return ExperimentReport(
            name="displacement-tails", estimate=0.0, ci_low=0.0, ci_high=0.0,
            replicas=replicas, seed=seed,
            parameters={"rho": rho, "t": t},
            extras={"forward": zero, "backtrack": zero, "retreat": zero,
                    "escaped": 0},
        )
    n_sites = domain_sites or engine.domain_size(rate, t)
    fwd_cut, back_cut = displacement_thresholds(rate, rho, t)
    hits = np.zeros(3, np.int64)
    used = 0
    escaped = 0
    for rep in range(replicas):
        counts, flags, origin = engine.standard_infection_start(
            rate, rho, n_sites, seed, rep, t_end=t)
        run = engine.run_infection(rate, counts, flags, t, seed, rep,
                                   origin=origin, horizons=(t,))
        if run.escaped:
            escaped += 1
            continue
        used += 1
        if run.sup >= fwd_cut:
            hits[0] += 1
        if -run.inf >= back_cut:
            hits[1] += 1
        if run.sup - run.front >= back_cut:
            hits[2] += 1
    names = ("forward", "backtrack", "retreat")
    extras = {"escaped": escaped}
    for i, nm in enumerate(names):
        p, lo, hi = wilson_ci(int(hits[i]), used)
        extras[nm] = {"estimate": p, "ci_low": lo, "ci_high": hi}
    p, lo, hi = wilson_ci(int(hits.max()), used) if used else (0.0, 0.0, 1.0)
    return ExperimentReport(
        name="displacement-tails", estimate=p, ci_low=lo, ci_high=hi,
        replicas=replicas, seed=seed,
        parameters={"rho": rho, "t": t, "domain_sites": n_sites,
                    "forward_cut": fwd_cut, "back_cut": back_cut},
        extras=extras,
    )


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------

def front_path_to_csv(path: FrontPath, filename):
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "front"])
        for t, r in zip(path.times, path.values):
            w.writerow([repr(float(t)), int(r)])


def martingale_to_csv(mart: FrontMartingale, filename):
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "martingale"])
        for t, v in zip(mart.times, mart.values):
            w.writerow([repr(float(t)), repr(float(v))])
        w.writerow([])
        w.writerow(["integrand_time", "integrand"])
        for t, v in mart.integrand_log:
            w.writerow([repr(float(t)), repr(float(v))])
