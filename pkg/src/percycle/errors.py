"""Exception hierarchy shared by all percycle modules."""


class PercycleError(Exception):
    """Base class for every error raised by this package."""

    kind = "error"


class InvalidCoefficientError(PercycleError, ValueError):
    kind = "invalid-coefficient"


class DomainError(PercycleError, ValueError):
    """A state left the nonnegative cone (or is not finite)."""

    kind = "domain"


class NoSolutionError(PercycleError):
    """Monotone inversion target lies at or above the function's supremum."""

    kind = "no-solution"

    def __init__(self, message, supremum=None):
        super().__init__(message)
        self.supremum = supremum


class HypothesisError(PercycleError):
    kind = "hypothesis-violated"

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class BoundsUnavailableError(PercycleError):
    kind = "bounds-unavailable"


class CertificateInvalidError(PercycleError):
    kind = "certificate-invalid"


class StepSizeError(PercycleError):
    kind = "step-size-underflow"


class ShootingError(PercycleError):
    """Newton shooting failed; carries the best iterate seen."""

    kind = "shooting-failed"

    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class ConfigError(PercycleError, ValueError):
    kind = "config"

    def __init__(self, message, key=None, line=None):
        super().__init__(message)
        self.key = key
        self.line = line
