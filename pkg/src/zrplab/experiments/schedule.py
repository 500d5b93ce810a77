"""Multiscale schedule and box geometry for the renormalization experiments."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class RenormSchedule:
    """Scales, velocities, densities and sprinkling levels per level k.

    Exact recursions:
      L_{k+1} = L_k ** growth,            ell_k = floor(sqrt(L_k)),
      v_{k+1} = v_k + 1/(k+1)^2,
      rho_k   = rho_{k+1} * (1 + L_k^{-1/16})   (so rho decreases in k),
      rho'_{k+1} = rho'_k * (1 + L_k^{-1/16})   (rho'_0 = rho_0),
      eps_{k+1}  = eps_k * (1 - 1/(k+1)^2).

    The classical base scale is (L0, growth) = (100, 3); desk-scale runs use
    smaller bases, the events are well-defined at any scale.
    """

    L0: int = 16
    growth: int = 2
    k_max: int = 2
    v0: float = 0.5
    rho0: float = 1.0
    eps0: float = 0.25

    def __post_init__(self):
        if self.L0 < 2 or self.growth < 2 or self.k_max < 0:
            raise ValueError("invalid schedule base")

    def scales(self) -> np.ndarray:
        out = [self.L0]
        for _ in range(self.k_max):
            out.append(out[-1] ** self.growth)
        return np.array(out, dtype=np.int64)

    def ell(self) -> np.ndarray:
        return np.array([int(math.isqrt(int(L))) for L in self.scales()],
                        dtype=np.int64)

    def velocities(self) -> np.ndarray:
        v = [float(self.v0)]
        for k in range(self.k_max):
            v.append(v[-1] + 1.0 / (k + 1) ** 2)
        return np.array(v)

    def densities(self) -> np.ndarray:
        ls = self.scales()
        rho = [float(self.rho0)]
        for k in range(self.k_max):
            rho.append(rho[-1] / (1.0 + float(ls[k]) ** (-1.0 / 16.0)))
        return np.array(rho)

    def densities_prime(self) -> np.ndarray:
        ls = self.scales()
        rho = [float(self.rho0)]
        for k in range(self.k_max):
            rho.append(rho[-1] * (1.0 + float(ls[k]) ** (-1.0 / 16.0)))
        return np.array(rho)

    def epsilons(self) -> np.ndarray:
        eps = [float(self.eps0)]
        for k in range(self.k_max):
            eps.append(eps[-1] * (1.0 - 1.0 / (k + 1) ** 2))
        return np.array(eps)

    def level(self, k: int) -> dict:
        if not 0 <= k <= self.k_max:
            raise ValueError(f"level {k} outside schedule (k_max={self.k_max})")
        return {
            "k": k,
            "L": int(self.scales()[k]),
            "ell": int(self.ell()[k]),
            "v": float(self.velocities()[k]),
            "rho": float(self.densities()[k]),
            "rho_prime": float(self.densities_prime()[k]),
            "eps": float(self.epsilons()[k]),
        }


@dataclass(frozen=True)
class SpaceTimeBox:
    """[x0, x1] x [t0, t1] in lattice coordinates and continuous time."""

    x0: int
    x1: int
    t0: float
    t1: float

    def __post_init__(self):
        if self.x1 < self.x0 or self.t1 < self.t0:
            raise ValueError("degenerate box")

    @property
    def side(self) -> float:
        return max(self.x1 - self.x0, self.t1 - self.t0)


def dist_v(b1: SpaceTimeBox, b2: SpaceTimeBox) -> float:
    """Vertical (time) separation: inf |t - s| over the two boxes."""
    if b1.t1 < b2.t0:
        return b2.t0 - b1.t1
    if b2.t1 < b1.t0:
        return b1.t0 - b2.t1
    return 0.0


def dist_h(b1: SpaceTimeBox, b2: SpaceTimeBox) -> float:
    """Horizontal (space) separation: inf |x - y| over the two boxes."""
    if b1.x1 < b2.x0:
        return b2.x0 - b1.x1
    if b2.x1 < b1.x0:
        return b1.x0 - b2.x1
    return 0.0


@dataclass(frozen=True)
class BoxGeometry:
    """Level-k renormalization box, its exit set and sub-box indexing."""

    schedule: RenormSchedule
    k: int

    def _lvl(self):
        return self.schedule.level(self.k)

    @property
    def half_width(self) -> int:
        lvl = self._lvl()
        return lvl["ell"] * lvl["L"] ** 2

    @property
    def horizon(self) -> int:
        return self._lvl()["L"]

    def box(self, anchor=(0, 0)) -> SpaceTimeBox:
        x, s = anchor
        return SpaceTimeBox(x - self.half_width, x + self.half_width,
                            s, s + self.horizon)

    def exit_set_description(self, anchor=(0, 0)) -> dict:
        """The right side of the box plus the fast segment of its top."""
        lvl = self._lvl()
        x, s = anchor
        return {
            "right_side": {"x": x + self.half_width, "t": [s, s + lvl["L"]]},
            "top_segment": {"x": [x + math.ceil(lvl["v"] * lvl["L"]),
                                  x + self.half_width],
                            "t": s + lvl["L"]},
        }

    def confinement_half_width(self) -> int:
        """Interval the allowed paths of this level are confined to."""
        return self.half_width // 4

    def anchors_meeting_next_level(self):
        """Indices m with B_k(m) intersecting B_{k+1} (desk scales only)."""
        nxt = BoxGeometry(self.schedule, self.k + 1)
        lvl = self._lvl()
        xs = range(-(nxt.half_width + self.half_width),
                   nxt.half_width + self.half_width + 1)
        ts = range(0, nxt.horizon + 1, lvl["L"])
        return ((x, t) for t in ts for x in xs)

    def count_anchors_meeting_next_level(self) -> int:
        nxt = BoxGeometry(self.schedule, self.k + 1)
        lvl = self._lvl()
        n_x = 2 * (nxt.half_width + self.half_width) + 1
        n_t = nxt.horizon // lvl["L"] + 1
        return n_x * n_t
