"""Exception types shared across the simulator."""


class TapRfError(Exception):
    """Base class for all simulator errors."""


class InvalidInputError(TapRfError, ValueError):
    """An argument violates a documented precondition."""


class DomainError(TapRfError, ValueError):
    """A value falls outside the domain a function is defined on."""


class DegenerateGeometryError(TapRfError):
    """Cluster centroid too close to the origin for a phase to exist."""


class NoRhythmDetectedError(TapRfError):
    """Tap detection found zero press/release pairs."""


class RecoveryFailedError(TapRfError):
    """The phase-recovery window held fewer than two signal states."""


class EnrollmentFailedError(TapRfError):
    """Too few usable enrollment trials to train a classifier."""


class ConfigError(TapRfError, ValueError):
    """A scenario or CLI configuration is malformed."""


class ExportError(TapRfError, KeyError):
    """A requested series is missing from a result bundle."""
