"""Statistical experiment layer: schedules, functionals, drivers, reports."""

from .functionals import FunctionalSpec
from .report import (
    ExperimentReport,
    bootstrap_ci,
    mean_ci,
    non_increasing_trend,
    wilson_ci,
)
from .runs import (
    chernoff_check,
    horizontal_decoupling_grid,
    make_horizontal_boxes,
    make_vertical_boxes,
    vertical_decoupling_grid,
    estimate_event_ek,
    estimate_event_fk,
    estimate_front_velocity,
    horizontal_decoupling_test,
    martingale_concentration_test,
    martingale_increment_tails,
    simultaneous_failure_curve,
    sprinkled_failure_curve,
    vertical_decoupling_test,
)
from .schedule import BoxGeometry, RenormSchedule, SpaceTimeBox, dist_h, dist_v

__all__ = [
    "ExperimentReport",
    "FunctionalSpec",
    "RenormSchedule",
    "BoxGeometry",
    "SpaceTimeBox",
    "dist_h",
    "dist_v",
    "wilson_ci",
    "mean_ci",
    "bootstrap_ci",
    "non_increasing_trend",
    "estimate_front_velocity",
    "vertical_decoupling_grid",
    "horizontal_decoupling_grid",
    "make_vertical_boxes",
    "make_horizontal_boxes",
    "martingale_concentration_test",
    "martingale_increment_tails",
    "vertical_decoupling_test",
    "horizontal_decoupling_test",
    "estimate_event_ek",
    "estimate_event_fk",
    "chernoff_check",
    "sprinkled_failure_curve",
    "simultaneous_failure_curve",
]
