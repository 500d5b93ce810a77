"""Rate-function calculus and invariant-measure machinery.

The jump-rate function g lives on occupancies ``0..k_max`` as an explicit
table, extended beyond the table by an affine tail ``g(k) = g(k_max) +
(k - k_max) * gamma_tail``.  Certification checks that every increment
``g(k) - g(k-1)`` lies in ``[gamma_minus, gamma_plus]``; all series bounds
below rest on ``g(k)! >= gamma_minus**k * k!``, which that condition implies.

Single-site marginals are ``nu_phi(k) = phi**k / (Z(phi) * g(k)!)`` with
``Z(phi) = sum_k phi**k / g(k)!``; the density of the product measure is
``R(phi) = phi * Z'(phi) / Z(phi)``, an increasing bijection, inverted here
by bracketing and bisection.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BracketFailure,
    IncrementViolation,
    NonzeroAtZero,
    RateFunctionError,
    ToleranceUnreachable,
)

SERIES_TERM_CAP = 10_000
BISECTION_TOL = 1e-10
BISECTION_MAX_ITER = 200
FUGACITY_CAP = 1e9


@dataclass(frozen=True)
class RateFunction:
    """A certified jump-rate function with increment bounds.

    ``values[k]`` is g(k) for ``k <= k_max``; beyond the table the affine
    tail rule applies.  Instances are produced by :func:`validate_rate_function`.
    """

    values: np.ndarray
    gamma_minus: float
    gamma_plus: float
    gamma_tail: float = 1.0
    _log_g_factorial: np.ndarray = field(repr=False, default=None)

    @property
    def k_max(self) -> int:
        return len(self.values) - 1

    def g(self, k):
        """Evaluate g at scalar or array occupancy, using the tail rule."""
        k = np.asarray(k)
        table = self.values[np.minimum(k, self.k_max)]
        tail = np.maximum(k - self.k_max, 0) * self.gamma_tail
        out = table + tail
        return out if out.ndim else float(out)

    def increment(self, k: int) -> float:
        """g(k) - g(k-1), valid for k >= 1."""
        if k <= self.k_max:
            return float(self.values[k] - self.values[k - 1])
        return self.gamma_tail

    def thinning_thresholds(self, n_max: int) -> np.ndarray:
        """Acceptance thresholds (g(n)-g(n-1))/gamma_plus for n = 1..n_max."""
        ks = np.arange(1, n_max + 1)
        return (self.g(ks) - self.g(ks - 1)) / self.gamma_plus

    def log_g_factorial(self, k: int) -> float:
        """log(g(k)!) = sum_{j<=k} log g(j)."""
        if k <= self.k_max:
            return float(self._log_g_factorial[k])
        base = float(self._log_g_factorial[self.k_max])
        js = np.arange(self.k_max + 1, k + 1)
        return base + float(np.sum(np.log(self.g(js))))


def validate_rate_function(
    g_table,
    gamma_minus: float,
    gamma_plus: float,
    k_max: int | None = None,
    gamma_tail: float | None = 1.0,
) -> RateFunction:
    """Certify a rate table against the increment condition.

    Raises :class:`NonzeroAtZero` if g(0) != 0 and :class:`IncrementViolation`
    at the first offending occupancy.  Certification covers the table
    ``0..k_max`` plus the affine tail rule (including the junction increment);
    pass ``gamma_tail=None`` for a table-only rate, in which case the
    simulator raises on occupancies beyond the table.
    """
    values = np.asarray(g_table, dtype=np.float64)
    if values.ndim != 1 or len(values) < 2:
        raise RateFunctionError("rate table must list g(0), g(1), ...")
    if k_max is None:
        k_max = len(values) - 1
    if len(values) < k_max + 1:
        raise RateFunctionError(
            f"table covers 0..{len(values) - 1}, need 0..{k_max}"
        )
    values = values[: k_max + 1].copy()
    if not (gamma_minus > 0 and gamma_plus > 0):
        raise RateFunctionError("gamma bounds must be positive")
    if not (gamma_minus <= 1.0 <= gamma_plus):
        raise RateFunctionError(
            "normalization convention requires gamma_minus <= 1 <= gamma_plus"
        )
    if values[0] != 0.0:
        raise NonzeroAtZero(f"g(0) = {values[0]!r}, expected 0")
    increments = np.diff(values)
    bad = np.where(
        (increments < gamma_minus - 1e-15) | (increments > gamma_plus + 1e-15)
    )[0]
    if len(bad):
        k = int(bad[0]) + 1
        raise IncrementViolation(k, float(increments[k - 1]), gamma_minus, gamma_plus)
    if gamma_tail is None:
        gamma_tail = np.nan
    elif not (gamma_minus - 1e-15 <= gamma_tail <= gamma_plus + 1e-15):
        raise IncrementViolation(k_max + 1, gamma_tail, gamma_minus, gamma_plus)
    log_fact = np.zeros(k_max + 1)
    if k_max >= 1:
        log_fact[1:] = np.cumsum(np.log(values[1:]))
    rate = RateFunction(values, float(gamma_minus), float(gamma_plus), float(gamma_tail))
    object.__setattr__(rate, "_log_g_factorial", log_fact)
    return rate


def identity_rate(k_max: int = 200) -> RateFunction:
    """g(k) = k, the independent-walk rate function."""
    return validate_rate_function(np.arange(k_max + 1, dtype=np.float64), 1.0, 1.0)


def load_rate_function(path) -> RateFunction:
    """Load a rate function from a JSON file.

    Expected layout: ``{"values": [[k, g(k)], ...], "gamma_minus": x,
    "gamma_plus": y, "gamma_tail": z}`` with contiguous k starting at 0.
    """
    with open(path) as fh:
        doc = json.load(fh)
    pairs = sorted((int(k), float(v)) for k, v in doc["values"])
    ks = [k for k, _ in pairs]
    if ks != list(range(len(ks))):
        raise RateFunctionError(f"occupancies must be contiguous from 0, got {ks}")
    return validate_rate_function(
        [v for _, v in pairs],
        gamma_minus=float(doc["gamma_minus"]),
        gamma_plus=float(doc["gamma_plus"]),
        gamma_tail=float(doc.get("gamma_tail", 1.0)),
    )


def _series(rate: RateFunction, phi: float, tol: float):
    """Return (Z, S1, n_terms) with S1 = sum_k k phi^k / g(k)!.

    Truncation is certified through g(k)! >= gamma_minus**k k!: after K terms
    both remainders are below an explicit exponential-tail bound.
    """
    if phi < 0:
        raise RateFunctionError("fugacity must be non-negative")
    if tol <= 0:
        raise RateFunctionError("tolerance must be positive")
    if phi == 0.0:
        return 1.0, 0.0, 1
    a = phi / rate.gamma_minus
    z = 1.0
    s1 = 0.0
    term = 1.0          # phi^k / g(k)!
    bound_term = 1.0    # a^k / k!
    for k in range(1, SERIES_TERM_CAP + 1):
        term *= phi / rate.g(k)
        bound_term *= a / k
        z += term
        s1 += k * term
        # remainder of Z:  sum_{j>k} a^j/j! <= bound_term * q/(1-q)
        # remainder of S1: sum_{j>k} j a^j/j! = a * sum_{j>=k} a^j/j!
        if a < k + 1:
            q = a / (k + 1)
            rem_z = bound_term * q / (1.0 - q)
            rem_s1 = a * (bound_term + rem_z)
            if rem_z <= tol and rem_s1 <= tol:
                return z, s1, k + 1
    raise ToleranceUnreachable(
        f"series at phi={phi:.6g} did not reach tol={tol:.3g} "
        f"within {SERIES_TERM_CAP} terms"
    )


def partition_function(rate: RateFunction, phi: float, tol: float = 1e-12) -> float:
    """Z(phi) = sum_k phi^k / g(k)!, truncated with certified remainder <= tol."""
    z, _, _ = _series(rate, phi, tol)
    return z


def density_of_fugacity(rate: RateFunction, phi: float, tol: float = 1e-12) -> float:
    """Mean occupancy R(phi) of the single-site marginal at fugacity phi."""
    z, s1, _ = _series(rate, phi, tol)
    return s1 / z


def fugacity_of_density(rate: RateFunction, rho: float, tol: float = 1e-10) -> float:
    """Invert R by monotone bracketing plus bisection.

    R is an increasing bijection of [0, inf); bisection is the only method
    that needs no structure beyond that.
    """
    if rho < 0:
        raise RateFunctionError("density must be non-negative")
    if rho == 0.0:
        return 0.0
    series_tol = min(tol, 1e-12)
    hi = max(rho, 1.0)
    while density_of_fugacity(rate, hi, series_tol) < rho:
        hi *= 2.0
        if hi > FUGACITY_CAP:
            raise BracketFailure(
                f"no fugacity below {FUGACITY_CAP:.3g} reaches density {rho:.6g}"
            )
    lo = 0.0
    for _ in range(BISECTION_MAX_ITER):
        mid = 0.5 * (lo + hi)
        if density_of_fugacity(rate, mid, series_tol) < rho:
            lo = mid
        else:
            hi = mid
        if hi - lo <= BISECTION_TOL * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


def marginal_pmf(rate: RateFunction, phi: float, tol: float = 1e-14) -> np.ndarray:
    """Probability table of nu_phi, truncated when the certified tail <= tol."""
    if phi == 0.0:
        return np.array([1.0])
    a = phi / rate.gamma_minus
    terms = [1.0]
    term = 1.0
    bound_term = 1.0
    for k in range(1, SERIES_TERM_CAP + 1):
        term *= phi / rate.g(k)
        bound_term *= a / k
        terms.append(term)
        if a < k + 1:
            q = a / (k + 1)
            if bound_term * q / (1.0 - q) <= tol:
                break
    else:
        raise ToleranceUnreachable(f"marginal pmf at phi={phi:.6g}")
    pmf = np.asarray(terms)
    return pmf / pmf.sum()


def sample_marginal(rate: RateFunction, rho: float, rng, size=None):
    """Draw occupancies from mu_rho = nu_{R^{-1}(rho)} by inverse CDF.

    Product configurations are independent calls per site; pass ``size`` for a
    vectorized draw.
    """
    if rho == 0.0:
        return 0 if size is None else np.zeros(size, dtype=np.int64)
    phi = fugacity_of_density(rate, rho)
    cdf = np.cumsum(marginal_pmf(rate, phi))
    u = rng.random(size if size is not None else 1)
    ks = np.searchsorted(cdf, u, side="right").astype(np.int64)
    return int(ks[0]) if size is None else ks


def conditioned_marginal_cdf(rate: RateFunction, rho: float, min_occupancy: int = 1):
    """CDF of mu_rho conditioned on occupancy >= min_occupancy."""
    phi = fugacity_of_density(rate, rho)
    pmf = marginal_pmf(rate, phi).copy()
    pmf[:min_occupancy] = 0.0
    total = pmf.sum()
    if total <= 0:
        raise RateFunctionError("conditioning event has zero mass")
    return np.cumsum(pmf / total)


@dataclass(frozen=True)
class FugacityDensityPair:
    """A (phi, rho) pair with its partition value and truncation tolerance."""

    phi: float
    rho: float
    z: float
    tolerance: float

    def __post_init__(self):
        if self.z < 1.0 - 1e-12:
            raise RateFunctionError("Z(phi) >= 1 must hold (k = 0 term)")


def fugacity_density_pair(rate: RateFunction, rho: float, tol: float = 1e-12):
    phi = fugacity_of_density(rate, rho, tol)
    return FugacityDensityPair(phi, rho, partition_function(rate, phi, tol), tol)


@dataclass(frozen=True)
class ChernoffBound:
    """Closed-form exponential-moment bounds for n-site occupancy sums."""

    rho: float
    epsilon: float
    n: int
    bound_upper: float
    bound_lower: float
    c_ld: float
    lambda_upper: float
    lambda_lower: float

    def __post_init__(self):
        if not (0.0 <= self.bound_upper <= 1.0 and 0.0 <= self.bound_lower <= 1.0):
            raise RateFunctionError("Chernoff bounds must lie in [0, 1]")


def _log_mgf(rate: RateFunction, phi: float, lam: float, tol: float) -> float:
    """log E[e^{lam X}] for X ~ nu_phi, via the fugacity shift e^lam phi."""
    z_phi = partition_function(rate, phi, tol)
    z_shift = partition_function(rate, phi * np.exp(lam), tol)
    return float(np.log(z_shift) - np.log(z_phi))


def _refine_convex(fun, lo, hi, iters=200, rel=1e-13):
    """Golden-section minimization of a convex scalar function."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
        if b - a <= rel * max(1.0, abs(a) + abs(b)):
            break
    return (a + b) / 2.0, min(fc, fd)


def chernoff_bounds(
    rate: RateFunction,
    rho: float,
    epsilon: float,
    n: int,
    lambda_grid: int = 512,
    rho_max: float | None = None,
    tol: float = 1e-13,
) -> ChernoffBound:
    """Exponential-moment bounds on deviations of an n-site occupancy sum.

    ``bound_upper`` dominates P[sum X_k >= (rho+eps) n] and ``bound_lower``
    dominates P[sum X_k <= (rho-eps) n]; both are found by scanning a
    geometric lambda grid and refining the convex exponent.  ``c_ld`` is the
    smallest constant c with Z(e phi)/Z(phi) <= e^{c rho} over the configured
    density range.
    """
    if not (0.0 < epsilon <= 1.0):
        raise RateFunctionError("epsilon must lie in (0, 1]")
    if n < 1:
        raise RateFunctionError("n must be >= 1")
    phi = fugacity_of_density(rate, rho)

    def exponent_up(lam):
        return _log_mgf(rate, phi, lam, tol) - lam * (rho + epsilon)

    lam_star = np.log(fugacity_of_density(rate, rho + epsilon) / phi) if phi > 0 else 1.0
    lam_star = max(lam_star, 1e-9)
    grid = np.geomspace(lam_star / 64.0, lam_star * 4.0, lambda_grid)
    vals = np.array([exponent_up(l) for l in grid])
    i = int(np.argmin(vals))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, len(grid) - 1)]
    lam_up, exp_up = _refine_convex(exponent_up, lo, hi)
    exp_up = min(exp_up, 0.0)  # lambda = 0 always yields bound 1
    bound_upper = float(np.exp(n * exp_up))

    target = rho - epsilon
    if target < 0.0 or phi == 0.0:
        bound_lower, lam_low = 0.0, np.inf
        if phi == 0.0 and target >= 0.0:
            bound_lower, lam_low = 1.0, 0.0
    elif target == 0.0:
        # lambda -> inf limit: P[all sites empty] exactly.
        bound_lower = float(np.exp(-n * np.log(partition_function(rate, phi, tol))))
        lam_low = np.inf
    else:

        def exponent_low(lam):
            return _log_mgf(rate, phi, -lam, tol) + lam * target

        lam_star_low = max(np.log(phi / fugacity_of_density(rate, target)), 1e-9)
        grid = np.geomspace(lam_star_low / 64.0, lam_star_low * 4.0, lambda_grid)
        vals = np.array([exponent_low(l) for l in grid])
        i = int(np.argmin(vals))
        lam_low, exp_low = _refine_convex(
            exponent_low, grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
        )
        exp_low = min(exp_low, 0.0)
        bound_lower = float(np.exp(n * exp_low))

    if rho_max is None:
        rho_max = max(2.0 * rho, 1.0)
    rho_grid = np.geomspace(rho_max / 256.0, rho_max, 65)
    c_ld = 0.0
    for r in rho_grid:
        p = fugacity_of_density(rate, r)
        ratio = np.log(partition_function(rate, np.e * p, tol)) - np.log(
            partition_function(rate, p, tol)
        )
        c_ld = max(c_ld, ratio / r)
    return ChernoffBound(
        rho=rho,
        epsilon=epsilon,
        n=n,
        bound_upper=bound_upper,
        bound_lower=bound_lower,
        c_ld=float(c_ld),
        lambda_upper=float(lam_up),
        lambda_lower=float(lam_low),
    )
