"""Exception types shared across the package."""

import numpy as np


class CapabilityError(Exception):
    """A kernel or model cannot provide the requested derivative order."""


class SingularityError(ArithmeticError):
    """A derivative is requested at a point where the kernel is singular."""


class NumericalError(np.linalg.LinAlgError):
    """A linear system could not be factorized, even after jitter escalation."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class ConfigurationError(ValueError):
    """Invalid configuration, e.g. an incompatible flow/target pairing."""

    def __init__(self, message, field=None):
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field


class DivergenceError(FloatingPointError):
    """A particle update produced non-finite coordinates.

    Attributes
    ----------
    step : int
        Index of the step that produced the non-finite state.
    last_valid : numpy.ndarray
        Particle positions before the offending update.
    """

    def __init__(self, step, last_valid, trajectory=None):
        super().__init__(f"non-finite particle positions produced at step {step}")
        self.step = step
        self.last_valid = last_valid
        self.trajectory = trajectory


class PpmFormatError(ValueError):
    """Malformed or unsupported PPM file."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset
