"""zrplab: a desk-scale laboratory for the zero range process with infection."""

from .rates import (
    ChernoffBound,
    FugacityDensityPair,
    RateFunction,
    chernoff_bounds,
    density_of_fugacity,
    fugacity_of_density,
    identity_rate,
    load_rate_function,
    partition_function,
    sample_marginal,
    validate_rate_function,
)
from .sim import (
    Domain,
    MarkEvent,
    PileConfig,
    SiteConfig,
    Trajectory,
    evolve,
    occupancy_excursion_check,
    sample_stationary_config,
    torus,
)
from .infection import (
    FrontMartingale,
    FrontPath,
    InfectionState,
    OccupationStat,
    displacement_tail_report,
    eta_allowed_check,
    front_martingale,
    init_infection,
    occupation_fraction,
    step_infection,
)
from .coupling import (
    CouplingRun,
    MatchingState,
    basic_monotone_coupling,
    build_matching,
    simultaneous_coupling_run,
    sprinkled_coupling_run,
)
from .oracle import (
    GeneratorMatrix,
    StateSpace,
    build_generator,
    check_canonical_stationarity,
    transient_distribution,
)

__all__ = [
    "RateFunction",
    "FugacityDensityPair",
    "ChernoffBound",
    "validate_rate_function",
    "identity_rate",
    "load_rate_function",
    "partition_function",
    "density_of_fugacity",
    "fugacity_of_density",
    "sample_marginal",
    "chernoff_bounds",
    "Domain",
    "torus",
    "SiteConfig",
    "PileConfig",
    "MarkEvent",
    "Trajectory",
    "evolve",
    "sample_stationary_config",
    "occupancy_excursion_check",
    "InfectionState",
    "FrontPath",
    "FrontMartingale",
    "OccupationStat",
    "init_infection",
    "step_infection",
    "front_martingale",
    "eta_allowed_check",
    "occupation_fraction",
    "displacement_tail_report",
    "MatchingState",
    "CouplingRun",
    "build_matching",
    "basic_monotone_coupling",
    "sprinkled_coupling_run",
    "simultaneous_coupling_run",
    "StateSpace",
    "GeneratorMatrix",
    "build_generator",
    "check_canonical_stationarity",
    "transient_distribution",
]

__version__ = "0.1.0"
