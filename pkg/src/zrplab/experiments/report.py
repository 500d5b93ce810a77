"""Report containers and interval estimators shared by all experiments."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sstats

from .. import rng


@dataclass
class ExperimentReport:
    """Point estimate with interval, fully replayable from (seed, parameters)."""

    name: str
    estimate: float
    ci_low: float
    ci_high: float
    replicas: int
    seed: int
    parameters: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def __post_init__(self):
        if self.replicas < 1:
            raise ValueError("replicas must be >= 1")
        if not (self.ci_low <= self.estimate + 1e-12 and
                self.estimate <= self.ci_high + 1e-12):
            raise ValueError("confidence interval must bracket the estimate")

    def to_dict(self) -> dict:
        # wall_time is intentionally excluded: output files must be
        # byte-identical across reruns of the same (config, seed).
        return {
            "name": self.name,
            "estimate": self.estimate,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "replicas": self.replicas,
            "seed": self.seed,
            "parameters": self.parameters,
            "extras": self.extras,
        }


def wilson_ci(successes: int, trials: int, level: float = 0.95):
    """Wilson score interval for a binomial proportion."""
    if trials == 0:
        return 0.0, 0.0, 1.0
    z = sstats.norm.ppf(0.5 + level / 2.0)
    p = successes / trials
    denom = 1.0 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return p, max(0.0, center - half), min(1.0, center + half)


def mean_ci(values, level: float = 0.95):
    """Normal-approximation interval for a sample mean."""
    v = np.asarray(values, dtype=np.float64)
    n = len(v)
    m = float(v.mean())
    if n < 2:
        return m, m, m
    se = float(v.std(ddof=1) / math.sqrt(n))
    z = sstats.norm.ppf(0.5 + level / 2.0)
    return m, m - z * se, m + z * se


def bootstrap_ci(values, statistic, n_boot: int, seed: int, level: float = 0.95,
                 stream_id: int = rng.STREAM_BOOTSTRAP):
    """Percentile bootstrap over replica-level resampling.

    ``values`` may be a single array or a tuple of arrays resampled jointly
    with a shared index set; ``statistic`` maps the resampled array(s) to a
    scalar.  Deterministic given (seed, n_boot).
    """
    if isinstance(values, tuple):
        arrays = tuple(np.asarray(v) for v in values)
        n = len(arrays[0])
    else:
        arrays = (np.asarray(values),)
        n = len(arrays[0])
    gen = rng.stream(seed, 0, stream_id)
    est = float(statistic(*arrays))
    stat = np.empty(n_boot)
    for b in range(n_boot):
        idx = gen.integers(0, n, size=n)
        stat[b] = statistic(*(a[idx] for a in arrays))
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(stat, [alpha, 1.0 - alpha])
    return est, float(min(lo, est)), float(max(hi, est))


def one_sided_increase_pvalue(succ_a: int, n_a: int, succ_b: int, n_b: int) -> float:
    """P-value for H1: p_b > p_a (pooled z-test); small means b increased.

    Used for trend checks of the form "frequency non-increasing": the trend
    is rejected only when a later frequency is significantly larger.
    """
    p_pool = (succ_a + succ_b) / (n_a + n_b)
    se = math.sqrt(p_pool * (1 - p_pool) * (1 / n_a + 1 / n_b))
    if se == 0.0:
        return 1.0 if succ_b * n_a <= succ_a * n_b else 0.0
    z = (succ_b / n_b - succ_a / n_a) / se
    return float(1.0 - sstats.norm.cdf(z))


def non_increasing_trend(successes, trials, alpha: float = 0.05):
    """True when no successive pair shows a significant increase."""
    ok = True
    pvals = []
    for i in range(len(successes) - 1):
        p = one_sided_increase_pvalue(successes[i], trials[i],
                                      successes[i + 1], trials[i + 1])
        pvals.append(p)
        if p < alpha:
            ok = False
    return ok, pvals
