"""Exception types shared across the package."""


class ZrplabError(Exception):
    """Base class for all package errors."""


class RateFunctionError(ZrplabError, ValueError):
    """Invalid rate function input."""


class NonzeroAtZero(RateFunctionError):
    """g(0) must be zero."""


class IncrementViolation(RateFunctionError):
    """An increment g(k) - g(k-1) falls outside [gamma_minus, gamma_plus]."""

    def __init__(self, k, increment, gamma_minus, gamma_plus):
        self.k = k
        self.increment = increment
        super().__init__(
            f"increment g({k})-g({k - 1}) = {increment:.12g} outside "
            f"[{gamma_minus:.12g}, {gamma_plus:.12g}]"
        )


class ToleranceUnreachable(ZrplabError, ArithmeticError):
    """Series truncation would exceed the hard term cap."""


class BracketFailure(ZrplabError, ArithmeticError):
    """No bracketing fugacity found below the configured cap."""


class TableOverflow(ZrplabError, RuntimeError):
    """Occupancy exceeded the rate table and no tail rule is configured."""


class StateSpaceTooLarge(ZrplabError, ValueError):
    """Exact oracle refused: enumerated state space above the cap."""


class InconsistentState(ZrplabError, RuntimeError):
    """Infection overlay violated the all-or-nothing invariant on entry."""


class FrontEscaped(ZrplabError, RuntimeError):
    """The infection front reached the domain buffer; result invalid."""


class Unmatchable(ZrplabError, RuntimeError):
    """A matching subinterval holds more low-density than high-density particles."""

    def __init__(self, j, n_low, n_high):
        self.j = j
        self.n_low = n_low
        self.n_high = n_high
        super().__init__(
            f"subinterval {j}: {n_low} particles cannot all be matched into {n_high}"
        )


class SupportViolation(ZrplabError, ValueError):
    """A functional specification reads outside its declared box."""


class ConfigInvalid(ZrplabError, ValueError):
    """Run configuration failed validation (CLI exit code 2)."""
