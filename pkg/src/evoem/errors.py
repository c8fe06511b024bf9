"""Exception types."""

from __future__ import annotations


class EvoEmError(Exception):
    pass


class ParameterBlowupError(EvoEmError):
    """A covariance that must be positive definite is not.

    Usually indicates exploding model parameters during learning; the
    message carries iteration context when raised inside the EM loop.
    """


class CheckpointError(EvoEmError):
    pass


class ConfigError(EvoEmError):
    pass
