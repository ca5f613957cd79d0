"""Exception hierarchy.

Every error raised deliberately by the library derives from :class:`DspError`
so the command line can map it onto an exit code.
"""


class DspError(Exception):
    """Base class for numeric and domain errors."""


class InvalidArgumentError(DspError, ValueError):
    """An argument violates a documented precondition."""


class UndefinedWeightError(InvalidArgumentError):
    """A CG ratio has a vanishing denominator; the Zeeman channel does not couple."""


class NoCouplingError(DspError):
    """No spin-wave channel carries weight for the configured ensemble."""


class NearSingularityError(DspError):
    """A field point lies too close to a coil wire for reliable quadrature."""


class BracketError(DspError):
    """Golden-section search did not find an interior minimum."""

    def __init__(self, message, lo=None, hi=None, f_lo=None, f_hi=None):
        super().__init__(message)
        self.lo = lo
        self.hi = hi
        self.f_lo = f_lo
        self.f_hi = f_hi


class ConfigError(Exception):
    """Malformed or inconsistent scenario configuration."""

    def __init__(self, message, line=None, key=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
        self.key = key
