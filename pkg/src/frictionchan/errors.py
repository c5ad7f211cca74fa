"""Exception types shared across the package."""


class FrictionChanError(Exception):
    """Base class for package errors."""


class PreconditionError(FrictionChanError, ValueError):
    """A numerical precondition (grid coverage, step size, domain) is violated."""


class UnsupportedClosureError(FrictionChanError, NotImplementedError):
    """The requested feedback law / moment combination has no closed form."""


class ValidityError(FrictionChanError, ValueError):
    """Model parameters in a regime where the model is declared invalid."""

    def __init__(self, message, critical_mass=None):
        super().__init__(message)
        self.critical_mass = critical_mass


class ConfigError(FrictionChanError, ValueError):
    """A configuration file is malformed or misses a required key."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
