"""Core simulation surface: domains, configurations, trajectories, evolve.

The event-driven realization lives in the compiled kernels; this module
owns the user-facing types, the stationary sampler, trajectory exports and
the occupancy-excursion diagnostic.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import engine, rng
from .engine import EventLog
from .errors import RateFunctionError
from .rates import RateFunction, fugacity_of_density, marginal_pmf

TORUS = "torus"
INTERVAL = "interval"


@dataclass(frozen=True)
class Domain:
    """Finite stand-in for the integer lattice.

    ``origin_offset`` is the site index carrying lattice coordinate 0; on
    interval domains, accepted jumps off an edge leave the configuration
    unchanged (blocked-edge policy).
    """

    kind: str
    size: int
    origin_offset: int = -1

    def __post_init__(self):
        if self.kind not in (TORUS, INTERVAL):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.size < 2:
            raise ValueError("domain needs at least 2 sites")
        if self.origin_offset < 0:
            object.__setattr__(self, "origin_offset", self.size // 2)

    @property
    def is_torus(self) -> bool:
        return self.kind == TORUS

    def coord(self, site: int) -> int:
        c = site - self.origin_offset
        if self.is_torus:
            half = self.size // 2
            if c >= self.size - half:
                c -= self.size
            elif c < -half:
                c += self.size
        return c

    def site(self, coord: int) -> int:
        if self.is_torus:
            return (coord + self.origin_offset) % self.size
        s = coord + self.origin_offset
        if not 0 <= s < self.size:
            raise ValueError(f"coordinate {coord} outside interval domain")
        return s


def torus(size: int) -> Domain:
    return Domain(TORUS, size)


@dataclass
class SiteConfig:
    """Occupancy counts per site with a cached total."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if np.any(self.counts < 0):
            raise ValueError("occupancies must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other):
        return isinstance(other, SiteConfig) and np.array_equal(self.counts, other.counts)


@dataclass
class PileConfig:
    """Ordered particle identities per site (index 0 = bottom)."""

    piles: list

    @classmethod
    def from_counts(cls, counts) -> "PileConfig":
        piles = []
        nid = 0
        for k in np.asarray(counts, dtype=np.int64):
            piles.append(list(range(nid, nid + int(k))))
            nid += int(k)
        return cls(piles)

    def to_site_config(self) -> SiteConfig:
        return SiteConfig(np.array([len(p) for p in self.piles], dtype=np.int64))

    @property
    def total(self) -> int:
        return sum(len(p) for p in self.piles)

    def particle_ids(self):
        return [pid for pile in self.piles for pid in pile]


@dataclass(frozen=True)
class MarkEvent:
    """One point of the marked Poisson field, with its acceptance verdict."""

    t: float
    x: int
    n: int
    u: float
    h: int
    accepted: bool


@dataclass
class Trajectory:
    domain: Domain
    t_end: float
    snapshot_times: np.ndarray
    snapshots: np.ndarray
    initial: SiteConfig
    final: SiteConfig
    events: EventLog | None
    seed: int
    replica: int
    stream: int
    initial_total: int

    def mark_events(self):
        if self.events is None:
            raise ValueError("trajectory was recorded without an event log")
        return [
            MarkEvent(float(t), int(x), int(n), float(u), int(h), bool(a))
            for t, x, n, u, h, a in zip(
                self.events.t, self.events.x, self.events.n,
                self.events.u, self.events.h, self.events.accepted,
            )
        ]


def evolve(config, rate: RateFunction, domain: Domain, t_end: float,
           seed: int, replica: int = 0, *, stream: int = rng.STREAM_MARKS,
           snapshot_times=(), log_events=False, watch_site=-1) -> Trajectory:
    """Run the thinned mark dynamics to t_end.

    Accepts a SiteConfig or PileConfig (projected to counts; the compiled
    engine is identity-free, particle bookkeeping lives in the reference
    engine and the coupling runs).
    """
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    if isinstance(config, PileConfig):
        counts0 = config.to_site_config().counts
    elif isinstance(config, SiteConfig):
        counts0 = config.counts
    else:
        counts0 = np.asarray(config, dtype=np.int64)
    if len(counts0) != domain.size:
        raise ValueError("configuration does not match the domain size")
    run = engine.run_counts(
        rate, counts0, t_end, seed, replica, stream=stream,
        torus=domain.is_torus, snapshot_times=snapshot_times,
        log_events=log_events, watch_site=watch_site,
    )
    return Trajectory(
        domain=domain, t_end=float(t_end),
        snapshot_times=run.snapshot_times, snapshots=run.snapshots,
        initial=SiteConfig(counts0.copy()), final=SiteConfig(run.counts),
        events=run.events,
        seed=seed, replica=replica, stream=stream,
        initial_total=run.initial_total,
    )


def sample_stationary_config(rate: RateFunction, rho: float, domain: Domain,
                             seed: int, replica: int = 0) -> PileConfig:
    """Independent draws from the invariant marginal at each site."""
    counts, _ = engine.draw_product_config(rate, rho, domain.size, seed, replica)
    return PileConfig.from_counts(counts)


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------

def snapshots_to_csv(trajectory: Trajectory, path):
    """CSV with columns time, site, count."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "site", "count"])
        for ti, t in enumerate(trajectory.snapshot_times):
            for x, c in enumerate(trajectory.snapshots[ti]):
                w.writerow([repr(float(t)), x, int(c)])


_EVENT_RECORD = struct.Struct("<d i q d b B")


def events_to_binary(trajectory: Trajectory, path):
    """Compact log: little-endian (t f64, x i32, n i64, u f64, h i8, accepted u8)."""
    ev = trajectory.events
    if ev is None:
        raise ValueError("trajectory was recorded without an event log")
    with open(path, "wb") as fh:
        for t, x, n, u, h, a in zip(ev.t, ev.x, ev.n, ev.u, ev.h, ev.accepted):
            fh.write(_EVENT_RECORD.pack(float(t), int(x), int(n), float(u), int(h), int(a)))


def events_from_binary(path) -> EventLog:
    rec = _EVENT_RECORD
    ts, xs, ns, us, hs, accs = [], [], [], [], [], []
    with open(path, "rb") as fh:
        data = fh.read()
    for off in range(0, len(data), rec.size):
        t, x, n, u, h, a = rec.unpack_from(data, off)
        ts.append(t)
        xs.append(x)
        ns.append(n)
        us.append(u)
        hs.append(h)
        accs.append(a)
    return EventLog(np.array(ts), np.array(xs, np.int64), np.array(ns, np.int64),
                    np.array(us), np.array(hs, np.int64), np.array(accs, np.uint8))


# ---------------------------------------------------------------------------
# occupancy excursions at a fixed site (crude propagation diagnostic)
# ---------------------------------------------------------------------------

def excursion_threshold(rate: RateFunction, rho: float, u: float, t: float) -> float:
    """A(u, t) = (2u + 4 gamma_plus t)(rho + 1) + 1."""
    return (2.0 * u + 4.0 * rate.gamma_plus * t) * (rho + 1.0) + 1.0


@dataclass
class ExcursionReport:
    rho: float
    t: float
    u_grid: np.ndarray
    thresholds: np.ndarray
    frequencies: np.ndarray
    level_grid: np.ndarray
    level_frequencies: np.ndarray
    decay_slope: float | None
    replicas: int
    seed: int


def occupancy_excursion_check(rate: RateFunction, rho: float, t: float,
                              u_grid, replicas: int, seed: int, *,
                              domain: Domain | None = None,
                              level_grid=range(2, 11)) -> ExcursionReport:
    """Frequency of {occupancy at the origin reaches A(u, t) before t}.

    The A(u, t) thresholds are far in the marginal's tail at desk scale, so
    the report also carries frequencies over a raw occupancy-level grid
    where the exponential decay shape is measurable, plus a fitted
    log-frequency slope over that grid.
    """
    u_grid = np.asarray(list(u_grid), dtype=np.float64)
    thresholds = np.array([excursion_threshold(rate, rho, u, t) for u in u_grid])
    level_grid = np.asarray(list(level_grid), dtype=np.int64)
    if t == 0.0:
        # Degenerate horizon: exact marginal tail of the initial draw.
        pmf = marginal_pmf(rate, fugacity_of_density(rate, rho)) if rho > 0 else np.array([1.0])
        tail = 1.0 - np.cumsum(pmf)
        def tail_at(level):
            li = int(math.ceil(level)) - 1
            if li < 0:
                return 1.0
            return float(tail[li]) if li < len(tail) else 0.0
        freqs = np.array([tail_at(a) for a in thresholds])
        lfreqs = np.array([tail_at(v) for v in level_grid])
    else:
        if domain is None:
            domain = torus(engine.domain_size(rate, t))
        watch = domain.origin_offset
        maxima = np.zeros(replicas, np.int64)
        for rep in range(replicas):
            counts, _ = engine.draw_product_config(rate, rho, domain.size, seed, rep)
            run = engine.run_counts(rate, counts, t, seed, rep,
                                    torus=domain.is_torus, watch_site=watch)
            maxima[rep] = max(run.watch_max, counts[watch])
        freqs = np.array([(maxima >= a).mean() for a in thresholds])
        lfreqs = np.array([(maxima >= v).mean() for v in level_grid])
    pos = lfreqs > 0
    slope = None
    if pos.sum() >= 2:
        slope = float(np.polyfit(level_grid[pos], np.log(lfreqs[pos]), 1)[0])
    return ExcursionReport(
        rho=rho, t=t, u_grid=u_grid, thresholds=thresholds, frequencies=freqs,
        level_grid=level_grid, level_frequencies=lfreqs,
        decay_slope=slope, replicas=replicas, seed=seed,
    )
