"""Built-in library of box-supported occupancy functionals.

Decoupling experiments accept functionals only from this library: support
discipline and monotonicity are then guaranteed mechanically rather than by
auditing user code.  Each spec declares its box; evaluation reads only
kernel summaries computed inside that box.

Kinds:
  max_occupancy        1{ max occupancy over the box >= threshold }   (non-decreasing)
  slice_sum            1{ sum over box sites at slice_time >= threshold } (non-decreasing)
  integrated_occupancy 1{ integral of the box total over the time window >= threshold }
                                                                      (non-decreasing)
  empty_box            1{ no particle enters the box window }         (non-increasing)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import SupportViolation
from .schedule import SpaceTimeBox

KINDS = ("max_occupancy", "slice_sum", "integrated_occupancy", "empty_box")


@dataclass(frozen=True)
class FunctionalSpec:
    kind: str
    box: SpaceTimeBox
    threshold: float = 1.0
    slice_time: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SupportViolation(f"unknown functional kind {self.kind!r}")
        if self.kind == "slice_sum":
            if self.slice_time is None:
                raise SupportViolation("slice_sum needs slice_time")
            if not self.box.t0 <= self.slice_time <= self.box.t1:
                raise SupportViolation("slice_time outside the declared box")
        if self.kind in ("max_occupancy", "slice_sum") and self.threshold < 1:
            raise SupportViolation("occupancy thresholds must be >= 1")

    @property
    def monotone_sign(self) -> int:
        return -1 if self.kind == "empty_box" else 1

    def needs_box_tracker(self) -> bool:
        return self.kind in ("max_occupancy", "integrated_occupancy", "empty_box")

    def needs_snapshot(self) -> bool:
        return self.kind == "slice_sum"


def kernel_inputs(specs, domain):
    """Box-tracker rows and snapshot times the kernel must record."""
    boxes = []
    box_of_spec = {}
    snap_times = []
    snap_of_spec = {}
    for i, spec in enumerate(specs):
        if spec.needs_box_tracker():
            box_of_spec[i] = len(boxes)
            boxes.append([
                domain.site(spec.box.x0), domain.site(spec.box.x1),
                spec.box.t0, spec.box.t1,
            ])
            if domain.site(spec.box.x0) > domain.site(spec.box.x1):
                raise SupportViolation("box wraps around the torus seam")
        if spec.needs_snapshot():
            snap_of_spec[i] = len(snap_times)
            snap_times.append(spec.slice_time)
    return boxes, box_of_spec, snap_times, snap_of_spec


def evaluate(spec, spec_index, run, domain, box_of_spec, snap_of_spec) -> int:
    """0/1 value of one functional from a CountsRun's summaries."""
    if spec.kind == "max_occupancy":
        return int(run.box_max[box_of_spec[spec_index]] >= spec.threshold)
    if spec.kind == "empty_box":
        return int(run.box_max[box_of_spec[spec_index]] == 0)
    if spec.kind == "integrated_occupancy":
        return int(run.box_integral[box_of_spec[spec_index]] >= spec.threshold)
    snap = run.snapshots[snap_of_spec[spec_index]]
    lo = domain.site(spec.box.x0)
    hi = domain.site(spec.box.x1)
    return int(snap[lo:hi + 1].sum() >= spec.threshold)


def evaluate_on_counts(spec, counts_by_time, domain) -> int:
    """Reference evaluation from dense snapshots (tests only)."""
    lo = domain.site(spec.box.x0)
    hi = domain.site(spec.box.x1)
    if spec.kind == "slice_sum":
        return int(counts_by_time(spec.slice_time)[lo:hi + 1].sum() >= spec.threshold)
    raise NotImplementedError("dense reference exists for slice_sum only")
