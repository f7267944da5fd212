"""Exception and warning types raised across the package."""


class MuskatError(Exception):
    """Base class for all errors raised by this package."""


class MassNotUnit(MuskatError, ValueError):
    pass


class DomainOverflow(MuskatError, ValueError):
    pass


class SizeMismatch(MuskatError, ValueError):
    pass


class NonMonotoneMap(MuskatError, ValueError):
    pass


class NonMonotone(MuskatError, ValueError):
    """Particle positions are not strictly increasing."""


class NegativeTime(MuskatError, ValueError):
    pass


class NonAdmissible(MuskatError, ValueError):
    pass


class ZeroMass(MuskatError, ValueError):
    pass


class NoConvergence(MuskatError, RuntimeError):
    """Raised by the scheme driver when a step fails to converge.

    The failed step's index and solver report are attached.
    """

    def __init__(self, message, step=None, report=None):
        super().__init__(message)
        self.step = step
        self.report = report


class CflViolation(MuskatError, ValueError):
    pass


class NoOverlap(MuskatError, ValueError):
    pass


class DegenerateFit(MuskatError, ValueError):
    pass


class PresetOutOfDomain(MuskatError, ValueError):
    pass


class SchemaError(MuskatError, ValueError):
    """Configuration validation failure.

    ``violations`` holds ``(key, reason)`` pairs, one per offending key.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        text = "; ".join(f"{key}: {reason}" for key, reason in self.violations)
        super().__init__(text)


# warnings


class DegenerateDensity(UserWarning):
    """A quantile level fell on a zero-density plateau of the CDF."""


class BoundaryLeak(UserWarning):
    """Mass reached the ends of the truncated computational domain."""


class NotAMinimizer(UserWarning):
    """An optimality certificate failed by more than the solver slack."""
